//! Name-keyed registries of denoiser backends and codecs, so configuration and
//! the command line can select implementations by name.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::denoise::remote::RemoteBackend;
use crate::denoise::{
    Codec, ConsensusToyDenoiser, Denoiser, DenoiserBackend, DownscaleCodec, IdentityCodec, SessionInfo, TargetDenoiser,
};
use crate::error::{Error, Result};
use crate::geometry::{render, TextureMap};
use crate::image::Image;
use crate::scene::toy::smooth_texture;

/// Constructor stored in a [`Registry`].
pub type Factory<T, S> = fn(&S) -> Result<Box<T>>;

/// Factories of one kind of strategy, keyed by name.
pub struct Registry<T: ?Sized, S> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, S>>,
}

impl<T: ?Sized, S> Registry<T, S> {
    pub fn empty(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Adds or replaces a factory.
    pub fn register(&mut self, name: &str, factory: Factory<T, S>) -> &mut Self {
        self.factories.insert(name.to_string(), factory);
        self
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, settings: &S) -> Result<Box<T>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown {} `{name}` (available: {})",
                self.kind,
                self.names().join(", ")
            ))
        })?;
        factory(settings)
    }
}

/// Texture the analytic backends render their per-view targets from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceTexture {
    /// Smooth pseudo-random pattern over the atlas.
    Procedural { seed: u64 },
    /// An RGB image addressed by the mesh UVs.
    Png { path: PathBuf },
}

impl Default for ReferenceTexture {
    fn default() -> Self {
        ReferenceTexture::Procedural { seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub reference: ReferenceTexture,
    /// `host:port` of a remote denoiser.
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            reference: ReferenceTexture::default(),
            endpoint: None,
            timeout_secs: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSettings {
    pub name: String,
    /// Pixels per latent cell for the downscale codec.
    pub scale: usize,
}

impl Default for CodecSettings {
    fn default() -> Self {
        Self {
            name: "identity".into(),
            scale: 8,
        }
    }
}

pub type BackendRegistry = Registry<dyn DenoiserBackend, BackendSettings>;
pub type CodecRegistry = Registry<dyn Codec, CodecSettings>;

impl BackendRegistry {
    /// `target`, `consensus_toy`, and `remote`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty("denoiser backend");
        r.register("target", |s| Ok(Box::new(ReferenceBackend::new(&s.reference, false)?)))
            .register("consensus_toy", |s| {
                Ok(Box::new(ReferenceBackend::new(&s.reference, true)?))
            })
            .register("remote", |s| {
                let endpoint = s
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("remote backend needs an endpoint".into()))?;
                if !(s.timeout_secs > 0.0 && s.timeout_secs.is_finite()) {
                    return Err(Error::Config(format!("invalid remote timeout {}", s.timeout_secs)));
                }
                Ok(Box::new(RemoteBackend::new(
                    endpoint,
                    Duration::from_secs_f64(s.timeout_secs),
                )))
            });
        r
    }
}

impl CodecRegistry {
    /// `identity` and `downscale`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty("codec");
        r.register("identity", |_| Ok(Box::new(IdentityCodec)))
            .register("downscale", |s| Ok(Box::new(DownscaleCodec::new(s.scale)?)));
        r
    }
}

enum Reference {
    Procedural(u64),
    Image(TextureMap),
}

/// Backends whose denoisers steer every view toward a render of a reference texture.
pub struct ReferenceBackend {
    reference: Reference,
    consensus: bool,
}

impl ReferenceBackend {
    pub fn new(reference: &ReferenceTexture, consensus: bool) -> Result<Self> {
        let reference = match reference {
            ReferenceTexture::Procedural { seed } => Reference::Procedural(*seed),
            ReferenceTexture::Png { path } => {
                let img = Image::load_png(path)?;
                let n = img.pixel_count();
                Reference::Image(TextureMap::from_parts(img, vec![1.0; n])?)
            }
        };
        Ok(Self { reference, consensus })
    }

    /// Target latents of every session view.
    pub fn targets(&self, session: &SessionInfo<'_>) -> Result<Vec<(usize, Image)>> {
        let procedural;
        let texture = match &self.reference {
            Reference::Procedural(seed) => {
                procedural = smooth_texture(session.atlas, *seed)?;
                &procedural
            }
            Reference::Image(t) => t,
        };
        session
            .cameras
            .iter()
            .zip(session.view_ids)
            .map(|(cam, &id)| {
                let bundle = render(texture, session.mesh, cam)?;
                Ok((id, session.codec.encode(&bundle.color)?))
            })
            .collect()
    }
}

impl DenoiserBackend for ReferenceBackend {
    fn name(&self) -> &str {
        if self.consensus {
            "consensus_toy"
        } else {
            "target"
        }
    }

    fn open(&self, session: &SessionInfo<'_>) -> Result<Box<dyn Denoiser>> {
        let targets = self.targets(session)?;
        Ok(if self.consensus {
            Box::new(ConsensusToyDenoiser::new(session.schedule, targets))
        } else {
            Box::new(TargetDenoiser::new(session.schedule, targets))
        })
    }
}
