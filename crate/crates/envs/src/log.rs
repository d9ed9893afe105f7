//! Episode logs: one tab-separated `step action reward done` line per step.

use std::io::{self, BufRead, Write};

use attn_core::Action;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

fn format_action(action: &Action) -> String {
    match action {
        Action::Discrete(i) => i.to_string(),
        Action::Continuous(v) => v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","),
    }
}

impl StepRecord {
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            self.step,
            format_action(&self.action),
            self.reward,
            u8::from(self.done)
        )
    }

    /// Parses a line written by [`StepRecord::write`]. Integer actions parse
    /// as discrete.
    pub fn parse(line: &str) -> Option<StepRecord> {
        let mut parts = line.trim_end().split('\t');
        let step = parts.next()?.parse().ok()?;
        let action_text = parts.next()?;
        // continuous values are always written with a decimal point or exponent
        let action = if action_text.contains(['.', 'e', 'N', 'i']) {
            Action::Continuous(action_text.split(',').map(|v| v.parse().ok()).collect::<Option<_>>()?)
        } else {
            Action::Discrete(action_text.parse().ok()?)
        };
        let reward = parts.next()?.parse().ok()?;
        let done = match parts.next()? {
            "0" => false,
            "1" => true,
            _ => return None,
        };
        if parts.next().is_some() {
            return None;
        }
        Some(StepRecord {
            step,
            action,
            reward,
            done,
        })
    }
}

pub fn read_records<R: BufRead>(r: R) -> io::Result<Vec<StepRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            let l = l?;
            StepRecord::parse(&l)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad episode record {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let records = vec![
            StepRecord { step: 0, action: Action::Discrete(2), reward: 1.0, done: false },
            StepRecord { step: 1, action: Action::Continuous(vec![-0.25, 1.0, 0.0]), reward: -0.1, done: true },
        ];
        let mut buf = Vec::new();
        for r in &records {
            r.write(&mut buf).unwrap();
        }
        let text = String::from_utf8_lossy(&buf).into_owned();
        assert_eq!(text.lines().collect::<Vec<_>>(), ["0\t2\t1\t0", "1\t-0.25,1.0,0.0\t-0.1\t1"]);
        assert_eq!(read_records(&buf[..]).unwrap(), records);
    }
}
