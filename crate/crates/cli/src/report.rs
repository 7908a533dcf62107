//! Run reports, per-iteration trace tables and the bcard plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ddsparse::sparsify::ReweightTrace;
use ddsparse::synth::StabCertificate;
use ddsparse::verify::VerificationReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    /// `feasible`, `infeasible`, `converged`, `pass`, ...
    pub outcome: String,
    pub certificate: Option<StabCertificate>,
    pub bcard: Option<usize>,
    pub verification: Option<VerificationReport>,
    /// File holding the full iteration trace.
    pub trace: Option<String>,
    /// Command-specific fields.
    pub details: serde_json::Value,
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig, config_hash: String) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            config: config.clone(),
            timings: BTreeMap::new(),
            outcome: String::new(),
            certificate: None,
            bcard: None,
            verification: None,
            trace: None,
            details: serde_json::Value::Object(Default::default()),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("report values serialize");
        self.details
            .as_object_mut()
            .expect("details is an object")
            .insert(key.to_string(), v);
    }
}

/// One row per state: `t,bcard,f_value,f_bound,residual_min_eig,polished,frozen`.
pub fn trace_csv(trace: &ReweightTrace) -> String {
    let mut out = String::from("t,bcard,f_value,f_bound,residual_min_eig,polished,frozen\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in &trace.states {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.t,
            s.bcard,
            opt(s.f_value),
            opt(s.f_bound),
            s.certificate.residual_min_eig,
            s.polished as u8,
            s.frozen as u8
        )
        .expect("writing to a String");
    }
    out
}

/// Step plot of the block count over the iterations.
pub fn bcard_svg(trace: &ReweightTrace) -> String {
    const W: f64 = 480.0;
    const H: f64 = 300.0;
    const LEFT: f64 = 50.0;
    const BOTTOM: f64 = 40.0;
    const PAD: f64 = 15.0;
    let pts: Vec<(usize, usize)> = trace.states.iter().map(|s| (s.t, s.bcard)).collect();
    let t_max = pts.iter().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let b_max = pts.iter().map(|p| p.1).max().unwrap_or(0).max(1) as f64;
    let x = |t: f64| LEFT + t / t_max * (W - LEFT - PAD);
    let y = |b: f64| H - BOTTOM - b / b_max * (H - BOTTOM - PAD);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{l},{t} V{b} H{r}" fill="none" stroke="black"/>"#,
        l = LEFT,
        t = PAD,
        b = H - BOTTOM,
        r = W - PAD
    )
    .unwrap();
    for b in 0..=b_max as usize {
        let yy = y(b as f64);
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{b}</text>"#,
            LEFT - 6.0,
            yy + 4.0
        )
        .unwrap();
    }
    let step = ((t_max / 10.0).ceil() as usize).max(1);
    for t in (0..=t_max as usize).step_by(step) {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
            x(t as f64),
            H - BOTTOM + 16.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#,
        (LEFT + W - PAD) / 2.0,
        H - 6.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">bcard</text>"#,
        (H - BOTTOM) / 2.0,
        (H - BOTTOM) / 2.0
    )
    .unwrap();
    let mut d = String::new();
    for (i, &(t, b)) in pts.iter().enumerate() {
        let (xx, yy) = (x(t as f64), y(b as f64));
        if i == 0 {
            write!(d, "M{xx:.1},{yy:.1}").unwrap();
        } else {
            write!(d, " H{xx:.1} V{yy:.1}").unwrap();
        }
    }
    writeln!(s, r#"<path d="{d}" fill="none" stroke="steelblue" stroke-width="2"/>"#).unwrap();
    s.push_str("</svg>\n");
    s
}
