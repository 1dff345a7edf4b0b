//! CSV serialisation of trajectories, ensemble moments and ODE paths.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! inputs give byte-identical files.

use std::fmt::Write as _;

use crate::asymptotics::AsymptoticPath;
use crate::moments_control::{ControlledPath, MomentumPath};
use crate::sgd_sim::{EnsembleMoments, Trajectory};

fn upper_names(prefix: &str, d: usize) -> Vec<String> {
    let mut v = Vec::new();
    for i in 0..d {
        for j in i..d {
            v.push(format!("{prefix}_{i}_{j}"));
        }
    }
    v
}

fn push_row(s: &mut String, cells: impl IntoIterator<Item = String>) {
    let mut first = true;
    for c in cells {
        if !first {
            s.push(',');
        }
        s.push_str(&c);
        first = false;
    }
    s.push('\n');
}

pub fn trajectory_csv(t: &Trajectory) -> String {
    let d = t.states.first().map_or(0, |x| x.len());
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((0..d).map(|j| format!("x_{j}")));
    if t.velocities.is_some() {
        header.extend((0..d).map(|j| format!("v_{j}")));
    }
    if t.losses.is_some() {
        header.push("loss".into());
    }
    let mut s = String::new();
    push_row(&mut s, header);
    for i in 0..t.len() {
        let mut row = vec![t.steps[i].to_string(), t.times[i].to_string()];
        row.extend(t.states[i].iter().map(|v| v.to_string()));
        if let Some(v) = &t.velocities {
            row.extend(v[i].iter().map(|v| v.to_string()));
        }
        if let Some(l) = &t.losses {
            row.push(l[i].to_string());
        }
        push_row(&mut s, row);
    }
    s
}

/// `step, t, mean_j…, cov_i_j…` (upper triangle), plus loss moments when present.
pub fn moments_csv(m: &EnsembleMoments) -> String {
    let d = m.dim();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((0..d).map(|j| format!("mean_{j}")));
    if m.covariance.is_some() {
        header.extend(upper_names("cov", d));
    }
    if m.loss_mean.is_some() {
        header.extend(["loss_mean".to_string(), "loss_var".to_string()]);
    }
    let mut s = String::new();
    push_row(&mut s, header);
    for i in 0..m.len() {
        let mut row = vec![m.steps[i].to_string(), m.times[i].to_string()];
        row.extend(m.mean[i].iter().map(|v| v.to_string()));
        if let Some(c) = &m.covariance {
            for a in 0..d {
                for b in a..d {
                    row.push(c[i][(a, b)].to_string());
                }
            }
        }
        if let (Some(lm), Some(lv)) = (&m.loss_mean, &m.loss_var) {
            row.push(lm[i].to_string());
            row.push(lv[i].to_string());
        }
        push_row(&mut s, row);
    }
    s
}

/// `t, x0_j…, s_i_j…` (upper triangle of `S`).
pub fn asymptotic_csv(p: &AsymptoticPath) -> String {
    let d = p.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|j| format!("x0_{j}")));
    header.extend(upper_names("s", d));
    let mut s = String::new();
    push_row(&mut s, header);
    for i in 0..p.times.len() {
        let mut row = vec![p.times[i].to_string()];
        row.extend(p.x0_path[i].iter().map(|v| v.to_string()));
        for a in 0..d {
            for b in a..d {
                row.push(p.s_path[i][(a, b)].to_string());
            }
        }
        push_row(&mut s, row);
    }
    s
}

pub fn controlled_path_csv(p: &ControlledPath, control: &str) -> String {
    let mut s = format!("t,m,{control}\n");
    for i in 0..p.times.len() {
        let _ = writeln!(s, "{},{},{}", p.times[i], p.m[i], p.control[i]);
    }
    s
}

pub fn momentum_path_csv(p: &MomentumPath) -> String {
    let mut s = String::from("t,ef,ev2,evg,mu\n");
    for (i, m) in p.states.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{},{}", p.times[i], m.ef, m.ev2, m.evg, p.mu[i]);
    }
    s
}
