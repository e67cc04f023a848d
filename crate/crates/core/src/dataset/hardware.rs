use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Host facts recorded with every pair. Facts the OS does not expose stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareLabel {
    pub cpu_model: Option<String>,
    pub physical_cores: Option<u32>,
    pub logical_cores: Option<u32>,
    pub l1d_cache_bytes: Option<u64>,
    pub l2_cache_bytes: Option<u64>,
    pub l3_cache_bytes: Option<u64>,
    pub memory_total_bytes: Option<u64>,
}

/// Model string, logical CPU count and physical core count from `/proc/cpuinfo`
/// text. Physical cores are distinct (physical id, core id) pairs.
pub fn parse_cpuinfo(text: &str) -> (Option<String>, Option<u32>, Option<u32>) {
    let mut model = None;
    let mut logical = 0u32;
    let mut cores = BTreeSet::new();
    let (mut phys, mut core) = (None::<String>, None::<String>);
    let mut flush = |phys: &mut Option<String>, core: &mut Option<String>| {
        if let (Some(p), Some(c)) = (phys.take(), core.take()) {
            cores.insert((p, c));
        }
    };
    for line in text.lines() {
        let Some((key, value)) = line.split_once(':') else {
            if line.trim().is_empty() {
                flush(&mut phys, &mut core);
            }
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "processor" => logical += 1,
            "model name" if model.is_none() => model = Some(value.to_string()),
            "physical id" => phys = Some(value.to_string()),
            "core id" => core = Some(value.to_string()),
            _ => {}
        }
    }
    flush(&mut phys, &mut core);
    let logical = (logical > 0).then_some(logical);
    let physical = if cores.is_empty() { logical } else { Some(cores.len() as u32) };
    (model, physical, logical)
}

/// `32K`, `1024K`, `8M` style sizes from sysfs.
pub fn parse_cache_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (digits, mult) = match s.chars().last()? {
        'K' | 'k' => (&s[..s.len() - 1], 1024),
        'M' | 'm' => (&s[..s.len() - 1], 1024 * 1024),
        'G' | 'g' => (&s[..s.len() - 1], 1024 * 1024 * 1024),
        _ => (s, 1),
    };
    digits.trim().parse::<u64>().ok().map(|v| v * mult)
}

pub fn parse_meminfo(text: &str) -> Option<u64> {
    text.lines()
        .find_map(|l| l.strip_prefix("MemTotal:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map(|kib| kib * 1024)
}

fn caches(root: &Path) -> (Option<u64>, Option<u64>, Option<u64>) {
    let (mut l1d, mut l2, mut l3) = (None, None, None);
    let Ok(entries) = fs::read_dir(root) else {
        return (None, None, None);
    };
    for e in entries.flatten() {
        let dir = e.path();
        let read = |f: &str| fs::read_to_string(dir.join(f)).ok();
        let (Some(level), Some(kind), Some(size)) = (read("level"), read("type"), read("size")) else {
            continue;
        };
        let size = parse_cache_size(&size);
        match (level.trim(), kind.trim()) {
            ("1", "Data") => l1d = size,
            ("2", _) => l2 = size,
            ("3", _) => l3 = size,
            _ => {}
        }
    }
    (l1d, l2, l3)
}

/// Reads the current host from procfs and sysfs.
pub fn probe_hardware() -> HardwareLabel {
    let (cpu_model, physical_cores, logical_cores) = fs::read_to_string("/proc/cpuinfo")
        .map(|t| parse_cpuinfo(&t))
        .unwrap_or((None, None, None));
    let logical_cores = logical_cores.or_else(|| {
        std::thread::available_parallelism().ok().map(|n| n.get() as u32)
    });
    let (l1d, l2, l3) = caches(Path::new("/sys/devices/system/cpu/cpu0/cache"));
    HardwareLabel {
        cpu_model,
        physical_cores: physical_cores.or(logical_cores),
        logical_cores,
        l1d_cache_bytes: l1d,
        l2_cache_bytes: l2,
        l3_cache_bytes: l3,
        memory_total_bytes: fs::read_to_string("/proc/meminfo").ok().and_then(|t| parse_meminfo(&t)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(sockets: u32, cores: u32, threads: u32) -> String {
        let mut s = String::new();
        let mut n = 0;
        for p in 0..sockets {
            for _ in 0..threads {
                for c in 0..cores {
                    s += &format!(
                        "processor\t: {n}\nvendor_id\t: GenuineIntel\nmodel name\t: Intel(R) Xeon(R) Gold 6348 CPU @ 2.60GHz\nphysical id\t: {p}\ncore id\t\t: {c}\ncpu cores\t: {cores}\n\n"
                    );
                    n += 1;
                }
            }
        }
        s
    }

    #[test]
    fn dual_socket_xeon_fixture() {
        // 2 sockets x 28 cores x 2 threads
        let (model, phys, logical) = parse_cpuinfo(&fixture(2, 28, 2));
        assert_eq!(model.as_deref(), Some("Intel(R) Xeon(R) Gold 6348 CPU @ 2.60GHz"));
        assert_eq!(logical, Some(112));
        assert_eq!(phys, Some(56));
    }

    #[test]
    fn sizes_and_memory() {
        assert_eq!(parse_cache_size("48K\n"), Some(48 * 1024));
        assert_eq!(parse_cache_size("42M"), Some(42 * 1024 * 1024));
        assert_eq!(parse_cache_size("junk"), None);
        assert_eq!(parse_meminfo("MemFree: 1 kB\nMemTotal:  2048 kB\n"), Some(2048 * 1024));
    }

    #[test]
    fn host_probe_is_consistent() {
        let h = probe_hardware();
        if let (Some(l), Some(p)) = (h.logical_cores, h.physical_cores) {
            assert!(l >= p && p >= 1);
        }
    }
}
