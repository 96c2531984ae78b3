//! Option chains: one trading day of implied-volatility quotes, plus the flat
//! CSV schema they are read from.
//!
//! ```text
//! date,expiry_years,strike,forward,bid_iv,ask_iv,mid_iv
//! 2017-10-23,0.0192,2500,2570.1,0.101,0.108,0.1045
//! ```
//!
//! `bid_iv` and `ask_iv` may be left empty. Rows that fail validation are
//! skipped and reported as [`RowDiagnostic`]s; structural problems (bad
//! header, inconsistent forwards) abort the parse.

use std::collections::BTreeMap;
use std::io::BufRead;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricing::{IvSurface, SmilePoint, SmileSlice};
use crate::table;

pub const CHAIN_HEADER: [&str; 7] = ["date", "expiry_years", "strike", "forward", "bid_iv", "ask_iv", "mid_iv"];

/// Relative tolerance when checking that a maturity quotes a single forward.
const FORWARD_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainQuote {
    pub strike: f64,
    pub bid_iv: Option<f64>,
    pub ask_iv: Option<f64>,
    pub mid_iv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSlice {
    /// Maturity in years.
    pub expiry: f64,
    pub forward: f64,
    /// Quotes sorted by strike.
    pub quotes: Vec<ChainQuote>,
}

impl ChainSlice {
    pub fn log_moneyness(&self, quote: &ChainQuote) -> f64 {
        (quote.strike / self.forward).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionChain {
    pub date: NaiveDate,
    /// Slices sorted by maturity.
    pub slices: Vec<ChainSlice>,
}

/// A skipped input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDiagnostic {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedChains {
    /// One chain per date, in date order.
    pub chains: Vec<OptionChain>,
    pub diagnostics: Vec<RowDiagnostic>,
}

impl OptionChain {
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for slice in &self.slices {
            if !(slice.expiry > prev) {
                return Err(Error::Chain(format!("maturities must be strictly increasing at {}", slice.expiry)));
            }
            prev = slice.expiry;
            if !(slice.forward > 0.0) {
                return Err(Error::Chain(format!("nonpositive forward at maturity {}", slice.expiry)));
            }
            for q in &slice.quotes {
                check_quote(q).map_err(|m| Error::Chain(format!("maturity {}: {m}", slice.expiry)))?;
            }
        }
        Ok(())
    }

    /// Market surface in log-moneyness coordinates.
    pub fn to_surface(&self) -> IvSurface {
        let slices = self
            .slices
            .iter()
            .map(|s| SmileSlice {
                maturity: s.expiry,
                points: s
                    .quotes
                    .iter()
                    .map(|q| SmilePoint {
                        log_moneyness: s.log_moneyness(q),
                        iv: q.mid_iv,
                        bid: q.bid_iv,
                        ask: q.ask_iv,
                        std_error: None,
                        flagged: false,
                    })
                    .collect(),
            })
            .collect();
        IvSurface { slices }
    }

    /// Builds a chain with forward 1 from a surface (used for synthetic markets).
    pub fn from_surface(date: NaiveDate, forward: f64, surface: &IvSurface) -> Self {
        let slices = surface
            .slices
            .iter()
            .map(|s| ChainSlice {
                expiry: s.maturity,
                forward,
                quotes: s
                    .points
                    .iter()
                    .map(|p| ChainQuote {
                        strike: forward * p.log_moneyness.exp(),
                        bid_iv: p.bid,
                        ask_iv: p.ask,
                        mid_iv: p.iv,
                    })
                    .collect(),
            })
            .collect();
        OptionChain { date, slices }
    }
}

fn check_quote(q: &ChainQuote) -> std::result::Result<(), String> {
    if !(q.strike > 0.0) {
        return Err(format!("nonpositive strike {}", q.strike));
    }
    if !(q.mid_iv > 0.0) || !q.mid_iv.is_finite() {
        return Err(format!("mid_iv must be positive, got {}", q.mid_iv));
    }
    if let Some(b) = q.bid_iv {
        if !(b <= q.mid_iv) {
            return Err(format!("bid_iv {b} above mid_iv {}", q.mid_iv));
        }
    }
    if let Some(a) = q.ask_iv {
        if !(a >= q.mid_iv) {
            return Err(format!("ask_iv {a} below mid_iv {}", q.mid_iv));
        }
    }
    Ok(())
}

/// Parses a (possibly multi-date) chain CSV.
pub fn parse_chains<R: BufRead>(reader: R) -> Result<ParsedChains> {
    let rows = table::read_rows(reader, &CHAIN_HEADER, false).map_err(Error::Chain)?;
    let mut diagnostics = Vec::new();
    // date -> expiry bits -> (forward, quotes)
    let mut days: BTreeMap<NaiveDate, BTreeMap<u64, (f64, f64, Vec<ChainQuote>)>> = BTreeMap::new();
    for r in rows {
        let line_no = r.line as usize;
        let row = (|| -> std::result::Result<(NaiveDate, f64, f64, ChainQuote), String> {
            if r.len() != CHAIN_HEADER.len() {
                return Err(format!("expected {} fields, found {}", CHAIN_HEADER.len(), r.len()));
            }
            let date =
                NaiveDate::parse_from_str(r.get(0), "%Y-%m-%d").map_err(|e| format!("bad date '{}': {e}", r.get(0)))?;
            let num = |i: usize| -> std::result::Result<f64, String> {
                r.opt_f64(i)?.ok_or_else(|| format!("missing {}", CHAIN_HEADER[i]))
            };
            let expiry = num(1)?;
            if !(expiry > 0.0) || !expiry.is_finite() {
                return Err(format!("expiry_years must be positive, got {expiry}"));
            }
            let forward = num(3)?;
            if !(forward > 0.0) || !forward.is_finite() {
                return Err(format!("forward must be positive, got {forward}"));
            }
            let quote = ChainQuote { strike: num(2)?, bid_iv: r.opt_f64(4)?, ask_iv: r.opt_f64(5)?, mid_iv: num(6)? };
            check_quote(&quote)?;
            Ok((date, expiry, forward, quote))
        })();
        match row {
            Ok((date, expiry, forward, quote)) => {
                let slices = days.entry(date).or_default();
                let entry = slices.entry(expiry.to_bits()).or_insert((expiry, forward, Vec::new()));
                if (entry.1 - forward).abs() > FORWARD_REL_TOL * entry.1.abs() {
                    return Err(Error::Chain(format!(
                        "inconsistent forward for maturity {expiry} on {date}: {} vs {forward} (line {line_no})",
                        entry.1
                    )));
                }
                entry.2.push(quote);
            }
            Err(message) => {
                log::warn!("line {line_no}: {message}");
                diagnostics.push(RowDiagnostic { line: line_no, message });
            }
        }
    }

    let mut chains = Vec::with_capacity(days.len());
    for (date, slices) in days {
        let mut slices: Vec<ChainSlice> = slices
            .into_values()
            .map(|(expiry, forward, mut quotes)| {
                quotes.sort_by(|a, b| a.strike.total_cmp(&b.strike));
                ChainSlice { expiry, forward, quotes }
            })
            .collect();
        slices.sort_by(|a, b| a.expiry.total_cmp(&b.expiry));
        for s in &slices {
            if s.quotes.windows(2).any(|w| w[0].strike == w[1].strike) {
                return Err(Error::Chain(format!("duplicate strike in maturity {} on {date}", s.expiry)));
            }
        }
        chains.push(OptionChain { date, slices });
    }
    Ok(ParsedChains { chains, diagnostics })
}

/// Parses a single-date chain file.
pub fn parse_chain<R: BufRead>(reader: R) -> Result<(OptionChain, Vec<RowDiagnostic>)> {
    let parsed = parse_chains(reader)?;
    match parsed.chains.len() {
        1 => Ok((parsed.chains.into_iter().next().expect("one chain"), parsed.diagnostics)),
        0 => Err(Error::Chain("no valid quotes".into())),
        n => Err(Error::Chain(format!("expected a single date, found {n}"))),
    }
}

/// Writes chains in the CSV schema read by [`parse_chains`].
pub fn write_chains<W: std::io::Write>(mut out: W, chains: &[OptionChain]) -> std::io::Result<()> {
    writeln!(out, "{}", CHAIN_HEADER.join(","))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for chain in chains {
        for s in &chain.slices {
            for q in &s.quotes {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    chain.date,
                    s.expiry,
                    q.strike,
                    s.forward,
                    opt(q.bid_iv),
                    opt(q.ask_iv),
                    q.mid_iv
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
date,expiry_years,strike,forward,bid_iv,ask_iv,mid_iv
2017-10-23,0.1,95,100,0.21,0.23,0.22
2017-10-23,0.1,100,100,0.19,0.21,0.20
2017-10-23,0.1,105,100,,,0.19
2017-10-23,0.5,90,101,0.22,0.24,0.23
2017-10-23,0.5,110,101,0.17,0.19,0.18
";

    #[test]
    fn two_maturity_fixture() {
        let (chain, diags) = parse_chain(FIXTURE.as_bytes()).unwrap();
        assert!(diags.is_empty());
        assert_eq!(chain.slices.len(), 2);
        assert_eq!(chain.slices[0].quotes.len(), 3);
        assert_eq!(chain.slices[0].quotes[2].bid_iv, None);
        let k = chain.slices[1].log_moneyness(&chain.slices[1].quotes[1]);
        assert!((k - (110.0f64 / 101.0).ln()).abs() < 1e-15);
        chain.validate().unwrap();
    }

    #[test]
    fn nonpositive_mid_is_skipped() {
        let input = format!("{FIXTURE}2017-10-23,0.5,100,101,,,-0.1\n2017-10-23,0.5,100,101,,,0\n");
        let (chain, diags) = parse_chain(input.as_bytes()).unwrap();
        assert_eq!(diags.len(), 2);
        assert_eq!(diags[0].line, 7);
        assert!(diags[0].message.contains("mid_iv"));
        assert_eq!(chain.slices[1].quotes.len(), 2);
    }

    #[test]
    fn inconsistent_forward_is_fatal() {
        let input = format!("{FIXTURE}2017-10-23,0.5,100,102,,,0.2\n");
        let err = parse_chain(input.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("maturity 0.5"), "{err}");
    }

    #[test]
    fn malformed_header_aborts() {
        let err = parse_chain("date,strike,mid\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("malformed header"));
    }

    #[test]
    fn write_then_parse() {
        let (chain, _) = parse_chain(FIXTURE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_chains(&mut buf, std::slice::from_ref(&chain)).unwrap();
        let (back, _) = parse_chain(buf.as_slice()).unwrap();
        assert_eq!(back, chain);
    }
}
