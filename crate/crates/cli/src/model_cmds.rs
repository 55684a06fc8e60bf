use cookstate::error::Result;
use cookstate::graph::{reconcile as rc, FreezeSpec, HeadConfig, ParamCount, PUBLISHED_TOTAL, PUBLISHED_TRAINABLE};
use cookstate::train::ModelSpec;

use crate::{load_config, Global};

/// `22992167` → `22,992,167`.
pub fn grouped(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn published(label: &str) -> Option<usize> {
    PUBLISHED_TRAINABLE.iter().find(|(l, _)| *l == label).map(|p| p.1)
}

pub fn count_params(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let full = matches!(
        cfg.model,
        ModelSpec::Inception {
            input_shape: [3, 299, 299],
            ..
        }
    );
    let mut topo = cfg.model.build()?;
    let dash = || "-".to_string();
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>12} {:>14}",
        "freeze", "total", "published", "trainable", "published", "non-trainable"
    );
    for label in ["none", "0-100", "0-132", "0-164", "all"] {
        let spec: FreezeSpec = label.parse().expect("infallible");
        if topo.resolve_freeze(&spec).is_err() {
            continue;
        }
        topo.apply_freeze(&spec)?;
        let c: ParamCount = topo.count_params();
        let pub_total = if full { grouped(PUBLISHED_TOTAL) } else { dash() };
        let pub_train = match (full, published(label)) {
            (true, Some(p)) => grouped(p),
            _ => dash(),
        };
        println!(
            "{:<8} {:>12} {:>12} {:>12} {:>12} {:>14}",
            label,
            grouped(c.total),
            pub_total,
            grouped(c.trainable),
            pub_train,
            grouped(c.non_trainable)
        );
    }
    Ok(())
}

pub fn freeze_map(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let mut topo = cfg.model.build()?;
    let blocks: Vec<(usize, String)> = topo
        .mixed_blocks()
        .into_iter()
        .map(|(i, n)| (i, n.to_string()))
        .collect();
    println!("{:<8} {:>6} {:>10} {:>14}", "block", "index", "boundary", "trainable");
    for (i, name) in blocks {
        topo.apply_freeze(&FreezeSpec::Through(i))?;
        println!(
            "{:<8} {:>6} {:>10} {:>14}",
            name,
            i,
            format!("0-{i}"),
            grouped(topo.count_params().trainable)
        );
    }
    Ok(())
}

pub fn reconcile(top: usize) -> Result<()> {
    let all = rc::enumerate()?;
    println!("{} head layouts searched; best {}:", all.len(), top.min(all.len()));
    let describe = |h: &HeadConfig| {
        format!(
            "conv {}/{} bias={} norm={:?}/{:?} dense={:?}",
            h.conv1_filters, h.conv2_filters, h.conv_bias, h.norm1, h.norm2, h.dense_units
        )
    };
    for c in all.iter().take(top) {
        println!(
            "  {:<70} Δtotal {:>6} Δtrainable {:>6}",
            describe(&c.head),
            c.total_residual,
            c.trainable_residual
        );
    }
    if let Some(b) = rc::best_with_described_widths(&all) {
        println!(
            "best with 64/32 widths: {} Δtotal {} Δtrainable {} ({:.4}% of total)",
            describe(&b.head),
            b.total_residual,
            b.trainable_residual,
            100.0 * b.relative_residual()
        );
    }
    let head = HeadConfig::reconciled();
    let (body, _) = cookstate::graph::inception_v3_body([3, 299, 299])?;
    let topo = cookstate::graph::build_inception_v3([3, 299, 299], &head)?;
    println!("reconciled head ({}):", describe(&head));
    for (name, c) in rc::head_line_items(&topo, body.len()) {
        println!(
            "  {:<24} {:>8} ({} trainable)",
            name,
            grouped(c.total),
            grouped(c.trainable)
        );
    }
    println!("{:<8} {:>12} {:>12}", "freeze", "trainable", "published");
    for (label, c, p) in rc::freeze_table(&head)? {
        println!("{:<8} {:>12} {:>12}", label, grouped(c.trainable), grouped(p));
    }
    Ok(())
}
