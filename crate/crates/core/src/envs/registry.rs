use std::collections::BTreeMap;

use serde::de::DeserializeOwned;

use super::{
    BanditParams, ConstrainedPointMass, ConstrainedPointMassParams, Env, MultiModalBandit, PointMass2D,
    PointMassParams,
};
use crate::error::{Error, Result};

type Factory = Box<dyn Fn(&toml::Table) -> Result<Box<dyn Env>> + Send + Sync>;

/// Name-to-constructor table used by experiment configs.
pub struct EnvRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for EnvRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl EnvRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("point_mass", |p| {
            Ok(Box::new(PointMass2D::new(parse_params::<PointMassParams>(p)?)?) as Box<dyn Env>)
        });
        r.register("multimodal_bandit", |p| {
            Ok(Box::new(MultiModalBandit::new(parse_params::<BanditParams>(p)?)?) as Box<dyn Env>)
        });
        r.register("constrained_point_mass", |p| {
            Ok(Box::new(ConstrainedPointMass::new(parse_params::<ConstrainedPointMassParams>(p)?)?)
                as Box<dyn Env>)
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&toml::Table) -> Result<Box<dyn Env>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_owned(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn make(&self, name: &str, params: &toml::Table) -> Result<Box<dyn Env>> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::config(
                "env.name",
                format!(
                    "unknown environment `{name}` (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        f(params)
    }
}

/// Deserializes an environment's parameter table, reporting failures against
/// `env.params`.
pub fn parse_params<P: DeserializeOwned>(params: &toml::Table) -> Result<P> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("env.params", e.message().to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_construct_with_defaults() {
        let r = EnvRegistry::with_builtins();
        for name in ["point_mass", "multimodal_bandit", "constrained_point_mass"] {
            let env = r.make(name, &toml::Table::new()).unwrap();
            assert_eq!(env.spec().name, name);
        }
    }

    #[test]
    fn unknown_name_and_unknown_param_are_config_errors() {
        let r = EnvRegistry::with_builtins();
        assert!(matches!(r.make("cartpole", &toml::Table::new()), Err(Error::Config { .. })));
        let mut p = toml::Table::new();
        p.insert("gravity".into(), toml::Value::Float(9.8));
        assert!(matches!(r.make("point_mass", &p), Err(Error::Config { .. })));
    }

    #[test]
    fn custom_envs_can_be_registered() {
        let mut r = EnvRegistry::empty();
        r.register("tiny", |_| Ok(Box::new(PointMass2D::new(PointMassParams::default())?) as Box<dyn Env>));
        assert!(r.make("tiny", &toml::Table::new()).is_ok());
    }

    #[test]
    fn params_are_applied() {
        let r = EnvRegistry::with_builtins();
        let p: toml::Table = toml::from_str("action_dim = 1\nnum_modes = 2").unwrap();
        let env = r.make("multimodal_bandit", &p).unwrap();
        assert_eq!(env.spec().action_dim, 1);
    }
}
