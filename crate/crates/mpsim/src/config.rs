//! Flat key=value configuration files (one key per line, `#` comments)
//! for the cluster model. Energy parameters use the same format and live
//! in [`crate::energy::EnergyParams::from_kv_text`].

use crate::cluster::ClusterConfig;

/// Parses a cluster configuration, starting from the defaults. The core
/// and bank counts are part of the architecture and cannot be changed.
pub fn cluster_config_from_kv(text: &str) -> Result<ClusterConfig, String> {
    let mut cfg = ClusterConfig::default();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", no + 1))?;
        let (k, v) = (k.trim(), v.trim());
        let num = || -> Result<u64, String> {
            let v = v.strip_prefix("0x").map_or_else(
                || v.parse::<u64>().map_err(|_| ()),
                |h| u64::from_str_radix(h, 16).map_err(|_| ()),
            );
            v.map_err(|_| format!("line {}: bad numeric value `{}`", no + 1, raw.trim()))
        };
        let flag = || -> Result<bool, String> {
            match v {
                "1" | "true" | "yes" => Ok(true),
                "0" | "false" | "no" => Ok(false),
                _ => Err(format!("line {}: bad boolean `{v}`", no + 1)),
            }
        };
        match k {
            "n_cores" => {
                if num()? != 16 {
                    return Err("n_cores is fixed at 16".into());
                }
            }
            "n_banks" => {
                if num()? != 32 {
                    return Err("n_banks is fixed at 32".into());
                }
            }
            "tcdm_bytes" => cfg.tcdm_bytes = num()? as u32,
            "tcdm_base" => cfg.tcdm_base = num()? as u32,
            "l2_base" => cfg.l2_base = num()? as u32,
            "l2_bytes" => cfg.l2_bytes = num()? as u32,
            "periph_base" => cfg.periph_base = num()? as u32,
            "icache_l0_bytes" => cfg.icache_l0_bytes = num()? as u32,
            "icache_line" => cfg.icache_line = num()? as u32,
            "icache_l15_bytes" => cfg.icache_l15_bytes = num()? as u32,
            "miss_l0_penalty" => cfg.miss_l0_penalty = num()? as u32,
            "miss_l15_penalty" => cfg.miss_l15_penalty = num()? as u32,
            "broadcast_enabled" => cfg.broadcast_enabled = flag()?,
            "strict_divergence" => cfg.strict_divergence = flag()?,
            "watchdog_cycles" => cfg.watchdog_cycles = num()?,
            other => return Err(format!("line {}: unknown key `{other}`", no + 1)),
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ClusterConfig) -> Result<(), String> {
    if cfg.tcdm_bytes % (cfg.n_banks as u32 * cfg.word_size) != 0 {
        return Err("tcdm_bytes must be a multiple of n_banks * word_size".into());
    }
    if cfg.icache_l0_bytes % cfg.icache_line != 0 || cfg.icache_l15_bytes % cfg.icache_line != 0 {
        return Err("icache sizes must be multiples of the line size".into());
    }
    Ok(())
}

pub fn cluster_config_to_kv(cfg: &ClusterConfig) -> String {
    format!(
        "# cluster model configuration\n\
         n_cores = {}\nn_banks = {}\ntcdm_bytes = {}\ntcdm_base = 0x{:x}\n\
         l2_base = 0x{:x}\nl2_bytes = {}\nperiph_base = 0x{:x}\n\
         icache_l0_bytes = {}\nicache_line = {}\nicache_l15_bytes = {}\n\
         miss_l0_penalty = {}\nmiss_l15_penalty = {}\n\
         broadcast_enabled = {}\nstrict_divergence = {}\nwatchdog_cycles = {}\n",
        cfg.n_cores,
        cfg.n_banks,
        cfg.tcdm_bytes,
        cfg.tcdm_base,
        cfg.l2_base,
        cfg.l2_bytes,
        cfg.periph_base,
        cfg.icache_l0_bytes,
        cfg.icache_line,
        cfg.icache_l15_bytes,
        cfg.miss_l0_penalty,
        cfg.miss_l15_penalty,
        cfg.broadcast_enabled,
        cfg.strict_divergence,
        cfg.watchdog_cycles,
    )
}
