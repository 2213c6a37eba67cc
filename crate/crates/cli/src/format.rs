//! On-disk documents: market and call-count inputs, and the result file.
//!
//! All documents are JSON. Floats are written in shortest round-trip form and
//! parsed with exact rounding, so `parse(emit(x)) == x` bit for bit.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use portfolio_vcg::{
    Allocation, MarketInput, MarketInstance, Offer, PaymentBasis, PriceSchedule, PropertyReport, QmapForm,
    QmapInstance,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferRecord {
    pub id: String,
    pub bid: f64,
    pub basis: PaymentBasis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_rate: Option<f64>,
    /// Largest accepted fraction of the pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub offers: Vec<OfferRecord>,
    /// Dense row-major covariance of returns.
    pub covariance: Vec<Vec<f64>>,
    pub q: f64,
    pub pool_size: u64,
}

impl MarketFile {
    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("market file serializes")
    }

    pub fn to_input(&self) -> MarketInput {
        MarketInput {
            offers: self
                .offers
                .iter()
                .map(|o| Offer {
                    id: o.id.clone(),
                    bid: o.bid,
                    basis: o.basis,
                    response_rate: o.response_rate,
                    cap: o.cap,
                })
                .collect(),
            covariance: self.covariance.clone(),
            q: self.q,
            pool_size: self.pool_size,
        }
    }

    pub fn from_instance(market: &MarketInstance) -> Self {
        let input = market.to_input();
        MarketFile {
            offers: input
                .offers
                .into_iter()
                .map(|o| OfferRecord { id: o.id, bid: o.bid, basis: o.basis, response_rate: o.response_rate, cap: o.cap })
                .collect(),
            covariance: input.covariance,
            q: input.q,
            pool_size: input.pool_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmapFile {
    #[serde(default)]
    pub form: QmapForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
    pub a: Vec<Vec<f64>>,
    /// Defaults to zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    pub c: Vec<f64>,
    pub q: f64,
    pub m: f64,
}

impl QmapFile {
    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("qmap file serializes")
    }

    pub fn to_instance(&self) -> portfolio_vcg::Result<QmapInstance> {
        let b = self.b.clone().unwrap_or_else(|| vec![0.0; self.c.len()]);
        QmapInstance::new(&self.a, b, self.c.clone(), self.q, self.m, self.form)
    }

    pub fn offer_ids(&self) -> Vec<String> {
        self.ids
            .clone()
            .unwrap_or_else(|| (1..=self.c.len()).map(|i| format!("offer-{i}")).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationRecord {
    pub weights: Vec<f64>,
    pub call_counts: Vec<f64>,
    pub rounded_calls: Vec<u64>,
    pub objective_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub degenerate: bool,
}

impl From<&Allocation> for AllocationRecord {
    fn from(a: &Allocation) -> Self {
        AllocationRecord {
            weights: a.weights.clone(),
            call_counts: a.call_counts.clone(),
            rounded_calls: a.rounded_calls.clone(),
            objective_value: a.objective_value,
        }
    }
}

impl From<&Allocation> for Diagnostics {
    fn from(a: &Allocation) -> Self {
        Diagnostics { iterations: a.iterations, kkt_residual: a.kkt_residual, degenerate: a.degenerate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultFile {
    pub command: String,
    /// `sha256:<hex>` of the input bytes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_digest: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub offer_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prices: Option<PriceSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reports: Option<Vec<PropertyReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

impl ResultFile {
    pub fn new(command: &str) -> Self {
        ResultFile {
            command: command.to_string(),
            input_digest: None,
            offer_ids: Vec::new(),
            allocation: None,
            prices: None,
            reports: None,
            diagnostics: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    /// Plain-text rendering for terminals.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        if let Some(d) = &self.input_digest {
            let _ = writeln!(out, "input:   {d}");
        }
        if let Some(a) = &self.allocation {
            let _ = writeln!(out, "objective: {:.9}", a.objective_value);
            let _ = writeln!(out, "{:<16} {:>12} {:>14} {:>10}", "offer", "weight", "calls", "rounded");
            for (i, id) in self.ids(a.weights.len()).iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:<16} {:>12.9} {:>14.6} {:>10}",
                    id, a.weights[i], a.call_counts[i], a.rounded_calls[i]
                );
            }
        }
        if let Some(p) = &self.prices {
            let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.9}"));
            let _ = writeln!(out, "{:<16} {:>14} {:>14} {:>14}", "offer", "price", "per_ad_call", "per_response");
            for (i, id) in self.ids(p.offer_prices.len()).iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:<16} {:>14.9} {:>14} {:>14}",
                    id,
                    p.offer_prices[i],
                    fmt_opt(p.per_ad_call[i]),
                    fmt_opt(p.per_response[i])
                );
            }
            let _ = writeln!(out, "publisher revenue: {:.9}", p.publisher_revenue);
            if let Some(r) = p.risk_charge {
                let _ = writeln!(out, "risk charge:       {r:.9}");
            }
        }
        if let Some(reports) = &self.reports {
            for r in reports {
                let _ = writeln!(
                    out,
                    "{:<13} {} trials={} violations={} skipped={} worst_margin={}",
                    r.property.name(),
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.trials,
                    r.violations + r.restriction_violations,
                    r.skipped,
                    r.worst_margin.map_or_else(|| "-".to_string(), |m| format!("{m:.3e}"))
                );
            }
        }
        if let Some(d) = &self.diagnostics {
            let _ = writeln!(
                out,
                "solver: iterations={} kkt_residual={:.3e} degenerate={}",
                d.iterations, d.kkt_residual, d.degenerate
            );
        }
        out
    }

    fn ids(&self, n: usize) -> Vec<String> {
        if self.offer_ids.len() == n {
            self.offer_ids.clone()
        } else {
            (1..=n).map(|i| format!("offer-{i}")).collect()
        }
    }
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}
