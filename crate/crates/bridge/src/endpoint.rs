use std::fmt;
use std::str::FromStr;

use crate::error::BridgeError;

/// Where an adapter lives: a local TCP socket or a child process spoken to
/// over its stdin and stdout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp:HOST:PORT`
    Tcp(String),
    /// `cmd:PROGRAM ARGS...`, split on whitespace.
    Command(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.rsplit_once(':').is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok()) {
                return Ok(Endpoint::Tcp(addr.to_string()));
            }
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if !argv.is_empty() {
                return Ok(Endpoint::Command(argv));
            }
        }
        Err(BridgeError::Endpoint(s.to_string()))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
            Endpoint::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_endpoints() {
        assert_eq!("tcp:127.0.0.1:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
        assert_eq!(
            "cmd:python adapter.py --env dodge".parse::<Endpoint>().unwrap(),
            Endpoint::Command(vec!["python".into(), "adapter.py".into(), "--env".into(), "dodge".into()])
        );
        for bad in ["", "tcp:", "tcp:host", "tcp:host:notaport", "cmd:", "cmd:   ", "udp:x:1"] {
            assert!(bad.parse::<Endpoint>().is_err(), "{bad}");
        }
        let e: Endpoint = "cmd:a b".parse().unwrap();
        assert_eq!(e.to_string(), "cmd:a b");
    }
}
