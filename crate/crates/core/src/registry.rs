//! Name-keyed registries of interchangeable strategies.
//!
//! Each strategy family (taggers, sentence encoders, clusterers, token
//! samplers) exposes a trait; concrete implementations are registered here
//! under a lowercase name and constructed at runtime from configuration.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

type Factory<T, A> = Box<dyn Fn(&A) -> Result<Box<T>> + Send + Sync>;

/// Factories for trait objects of type `T`, each built from arguments `A`.
pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, A>>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&A) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories
            .insert(name.to_lowercase(), Box::new(factory));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(&name.to_lowercase())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.factories.get(&name.to_lowercase()) {
            Some(factory) => factory(args),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }
}

impl<T: ?Sized, A> fmt::Debug for Registry<T, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names().collect::<Vec<_>>())
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

    #[test]
    fn builds_by_case_insensitive_name() {
        let mut reg: Registry<dyn Greeter, String> = Registry::new("greeter");
        reg.register("Hello", |who: &String| Ok(Box::new(Hello(who.clone()))));
        let g = reg.build("HELLO", &"bob".to_string()).unwrap();
        assert_eq!(g.greet(), "hello bob");
        assert!(reg.contains("hello"));
    }

    #[test]
    fn unknown_name_lists_alternatives() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("a", |_| Ok(Box::new(Hello("a".into()))));
        reg.register("b", |_| Ok(Box::new(Hello("b".into()))));
        let err = reg.build("c", &()).err().unwrap();
        assert_eq!(err.to_string(), "unknown greeter `c` (available: a, b)");
    }
}
