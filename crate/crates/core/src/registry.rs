//! Name-keyed factories for the interchangeable strategies of the pipeline
//! (chat backends, embedders, agent output grammars, text metrics).

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {family} `{name}` (known: {})", known.join(", "))]
pub struct UnknownStrategy {
    pub family: &'static str,
    pub name: String,
    pub known: Vec<&'static str>,
}

pub type Factory<T, C, E> = fn(&C) -> Result<Box<T>, E>;

/// Ordered table of `name -> constructor` for one strategy family.
pub struct Registry<T: ?Sized, C, E> {
    family: &'static str,
    factories: Vec<(&'static str, Factory<T, C, E>)>,
}

impl<T: ?Sized, C, E: From<UnknownStrategy>> Registry<T, C, E> {
    pub fn new(family: &'static str) -> Self {
        Registry { family, factories: Vec::new() }
    }

    /// Registers `factory` under `name`; a later registration with the same
    /// name replaces the earlier one.
    pub fn register(mut self, name: &'static str, factory: Factory<T, C, E>) -> Self {
        self.factories.retain(|(n, _)| *n != name);
        self.factories.push((name, factory));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.iter().any(|(n, _)| *n == name)
    }

    pub fn build(&self, name: &str, config: &C) -> Result<Box<T>, E> {
        let factory = self
            .factories
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| *f)
            .ok_or_else(|| UnknownStrategy { family: self.family, name: name.to_string(), known: self.names() })?;
        factory(config)
    }
}

impl<T: ?Sized, C, E> fmt::Debug for Registry<T, C, E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.factories.iter().map(|(n, _)| *n).collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello(String);
    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[allow(clippy::ptr_arg)]
    fn hello(cfg: &String) -> Result<Box<dyn Greeter>, UnknownStrategy> {
        Ok(Box::new(Hello(cfg.clone())))
    }

    #[test]
    fn builds_by_name_and_reports_unknown() {
        let reg: Registry<dyn Greeter, String, UnknownStrategy> = Registry::new("greeter").register("hello", hello);
        assert_eq!(reg.build("hello", &"bob".to_string()).unwrap().greet(), "hello bob");
        let err = reg.build("bye", &String::new()).err().unwrap();
        assert_eq!(err.to_string(), "unknown greeter `bye` (known: hello)");
    }
}
