"""Scenario loading, run orchestration and CSV/JSON report emission.

Scenario files are YAML key-value documents validated against the schema
below; unknown keys are rejected by name and every default reproduces the
reference setup (100 gNBs at 8 cores / 16 GB / 400 MHz, 60/30/10 device mix,
1 ms steps, 3600 s, 10 replications, 700 W/m^2 threshold, 24 h horizon).

Outputs: metrics.csv (long format), summary.json (aggregates + CI),
series.csv (per-second plot data), comparison.csv (multi-policy energy
table carrying the Diffusion-RL reference constants), sweep.csv (density
sweep). All files are byte-deterministic for a fixed (config, seed).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, replace

import yaml

from .energy import EnergyParams, SolarTrace
from .engine import (
    POLICIES,
    FeatureFlags,
    MetricsReport,
    Scenario,
    SimParams,
    density_sweep,
    replicate,
)
from .errors import ConfigError
from .security import AttackScenario
from .topology import NetworkConfig, Slice
from .traffic import TrafficParams

# Static reference constants from the Diffusion-RL baseline; carried in
# reports only, never runnable.
DIFFUSION_RL_REFERENCE = {"total_w": 5100.0, "nrts_w": 1780.0}

_SLICE_BY_NAME = {"LSS": Slice.LSS, "RTS": Slice.RTS, "NRTS": Slice.NRTS}


def _take(section: dict, path: str, allowed: dict) -> dict:
    """Pop known keys, mapping names; reject anything unexpected by name."""
    out = {}
    for key, value in section.items():
        if key not in allowed:
            raise ConfigError(f"unknown scenario key '{path}{key}'")
        out[allowed[key]] = value
    return out


def _network(section: dict) -> NetworkConfig:
    fields = _take(
        section,
        "network.",
        {
            "n_devices": "n_devices",
            "n_gnbs": "n_gnbs",
            "area_km2": "area_km2",
            "class_mix": "class_mix",
            "gnb_capacity": "gnb_capacity",
            "rng_seed": "rng_seed",
        },
    )
    cap = fields.get("gnb_capacity")
    if isinstance(cap, dict):
        capf = _take(cap, "network.gnb_capacity.", {"cpu_cores": "cpu", "ram_gb": "ram", "bw_mhz": "bw"})
        fields["gnb_capacity"] = (
            capf.get("cpu", 8.0), capf.get("ram", 16.0), capf.get("bw", 400.0),
        )
    if "class_mix" in fields:
        fields["class_mix"] = tuple(float(v) for v in fields["class_mix"])
    return NetworkConfig(**fields)


def _attack(section: dict) -> AttackScenario:
    fields = _take(
        section,
        "attack.",
        {
            "fraction": "adversary_fraction",
            "attacks": "attacks",
            "start_s": "start_s",
            "stop_s": "stop_s",
            "target_slice": "target_slice",
        },
    )
    if "attacks" in fields:
        fields["attacks"] = tuple(fields["attacks"])
    if "target_slice" in fields:
        fields["target_slice"] = _SLICE_BY_NAME[str(fields["target_slice"]).upper()]
    return AttackScenario(**fields)


def _energy(section: dict) -> EnergyParams:
    fields = _take(
        section,
        "energy.",
        {
            "beta_c_w": "beta_c_w",
            "beta_b_w": "beta_b_w",
            "theta_w_m2": "theta_w_m2",
            "horizon_h": "horizon_h",
            "lambda_weight": "lambda_weight",
            "weights": "weights",
            "targets_j": "targets_j",
            "panel_area_m2": "panel_area_m2",
            "panel_efficiency": "panel_efficiency",
            "idle_draw_fraction": "idle_draw_fraction",
            "max_delay_s": "max_delay_s",
        },
    )
    for key in ("weights", "targets_j"):
        if fields.get(key) is not None and key in fields:
            fields[key] = tuple(float(v) for v in fields[key])
    return EnergyParams(**fields)


def _solar(section: dict) -> SolarTrace:
    fields = _take(
        section,
        "solar.",
        {
            "peak_w_m2": "peak_w_m2",
            "day_length_s": "day_length_s",
            "sunrise_frac": "sunrise_frac",
            "sunset_frac": "sunset_frac",
            "cloud_rho": "cloud_rho",
            "cloud_sigma_w_m2": "cloud_sigma_w_m2",
            "resolution_s": "resolution_s",
            "shape": "shape",
        },
    )
    return SolarTrace(**fields)


def _flags(section: dict) -> FeatureFlags:
    fields = _take(
        section,
        "flags.",
        {"compression": "compression", "solar": "solar", "security": "security"},
    )
    return FeatureFlags(**fields)


def _sim(section: dict) -> SimParams:
    fields = _take(
        section,
        "sim.",
        {
            "twin_sync_ms": "twin_sync_ms",
            "twin_dim": "twin_dim",
            "fl_round_s": "fl_round_s",
            "fl_clients": "fl_clients",
            "fl_epochs": "fl_epochs",
            "request_refresh_s": "request_refresh_s",
            "spectral_eff_bps_hz": "spectral_eff_bps_hz",
            "quarantine_s": "quarantine_s",
            "demand_margin": "demand_margin",
            "cpu_demand_cores": "cpu_demand_cores",
            "ram_demand_gb": "ram_demand_gb",
            "puf_sigma_noise": "puf_sigma_noise",
            "reservoir_cap": "reservoir_cap",
            "centralized_policy": "centralized_policy",
        },
    )
    for key in ("twin_sync_ms", "cpu_demand_cores", "ram_demand_gb"):
        if key in fields:
            fields[key] = tuple(float(v) for v in fields[key])
    return SimParams(**fields)


def _traffic(section: dict) -> TrafficParams:
    fields = _take(
        section,
        "traffic.",
        {
            "beta_a": "beta_a",
            "beta_b": "beta_b",
            "beta_packet_bytes": "beta_packet_bytes",
            "cbr_rate_bps": "cbr_rate_bps",
            "cbr_sigma": "cbr_sigma",
            "cbr_mtu_bytes": "cbr_mtu_bytes",
            "period_ms": "period_ms",
            "jitter_ms": "jitter_ms",
            "periodic_packet_bytes": "periodic_packet_bytes",
        },
    )
    return TrafficParams(**fields)


def scenario_from_dict(data: dict | None) -> Scenario:
    """Build a validated Scenario; an empty document yields all defaults."""
    data = dict(data or {})
    known = {
        "network", "policy", "duration_s", "timestep_ms", "replications",
        "master_seed", "attack", "energy", "solar", "flags",
        "latency_bounds_ms", "sim", "traffic",
    }
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown scenario key '{key}'")
    kwargs = {}
    if "network" in data:
        kwargs["network"] = _network(data["network"] or {})
    if "attack" in data:
        kwargs["attack"] = _attack(data["attack"] or {})
    if "energy" in data:
        kwargs["energy"] = _energy(data["energy"] or {})
    if "solar" in data:
        kwargs["solar"] = _solar(data["solar"] or {})
    if "flags" in data:
        kwargs["flags"] = _flags(data["flags"] or {})
    if "sim" in data:
        kwargs["sim"] = _sim(data["sim"] or {})
    if "traffic" in data:
        kwargs["traffic_params"] = _traffic(data["traffic"] or {})
    if "latency_bounds_ms" in data:
        lb = data["latency_bounds_ms"]
        if isinstance(lb, dict):
            extra = set(lb) - set(_SLICE_BY_NAME)
            if extra:
                raise ConfigError(f"unknown scenario key 'latency_bounds_ms.{sorted(extra)[0]}'")
            kwargs["latency_bounds_ms"] = (
                float(lb.get("LSS", 1.0)), float(lb.get("RTS", 10.0)), float(lb.get("NRTS", 100.0)),
            )
        else:
            kwargs["latency_bounds_ms"] = tuple(float(v) for v in lb)
    for key in ("policy", "duration_s", "timestep_ms", "replications", "master_seed"):
        if key in data:
            kwargs[key] = data[key]
    scenario = Scenario(**kwargs)
    scenario.validate()
    return scenario


def load_scenario(path: str) -> Scenario:
    """Parse and validate a YAML scenario file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ConfigError("scenario file must contain a key-value mapping")
    return scenario_from_dict(data)


@dataclass
class ComparisonTable:
    rows: list[dict]

    def to_csv_rows(self) -> list[list]:
        out = [["algorithm", "total_energy_w", "nrts_energy_w", "reduction_pct"]]
        for row in self.rows:
            red = row["reduction_pct"]
            out.append(
                [
                    row["algorithm"],
                    repr(float(row["total_energy_w"])),
                    repr(float(row["nrts_energy_w"])),
                    "" if red is None else repr(float(red)),
                ]
            )
        return out


def emit_comparison(
    reports_by_policy: dict[str, list[MetricsReport]],
    reference_constants: dict | None = None,
) -> ComparisonTable:
    """Energy table across policies with the Diffusion-RL reference row.

    Reduction % is (reference NRTS - measured NRTS) / reference NRTS * 100;
    the reference row itself carries no reduction entry.
    """
    if not reports_by_policy or not any(reports_by_policy.values()):
        raise ValueError("emit_comparison needs at least one report")
    ref = reference_constants or DIFFUSION_RL_REFERENCE
    rows = [
        {
            "algorithm": "diffusion-rl (reference)",
            "total_energy_w": ref["total_w"],
            "nrts_energy_w": ref["nrts_w"],
            "reduction_pct": None,
        }
    ]
    for policy, reports in reports_by_policy.items():
        duration = max(reports[0].duration_s, 1e-9)
        total_w = float(sum(r.energy_totals["demand_j"] for r in reports) / len(reports) / duration)
        nrts_w = float(
            sum(r.energy_slices["NRTS"]["demand_j"] for r in reports) / len(reports) / duration
        )
        rows.append(
            {
                "algorithm": policy,
                "total_energy_w": total_w,
                "nrts_energy_w": nrts_w,
                "reduction_pct": (ref["nrts_w"] - nrts_w) / ref["nrts_w"] * 100.0,
            }
        )
    return ComparisonTable(rows=rows)


def _write_metrics_csv(path: str, reports_by_policy: dict[str, list[MetricsReport]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "replication", "metric", "slice", "value"])
        for policy, reports in reports_by_policy.items():
            for rep_idx, report in enumerate(reports):
                for metric, slc, value in report.to_rows():
                    writer.writerow([policy, rep_idx, metric, slc, repr(float(value))])


def _write_series_csv(path: str, reports_by_policy: dict[str, list[MetricsReport]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "replication", "series", "t", "value"])
        for policy, reports in reports_by_policy.items():
            for rep_idx, report in enumerate(reports):
                for name, values in report.series.items():
                    for t, v in enumerate(values):
                        writer.writerow([policy, rep_idx, name, t, repr(float(v))])


def _write_summary_json(path: str, scenario: Scenario, agg_by_policy: dict) -> None:
    payload = {
        "scenario": _scenario_echo(scenario),
        "policies": {
            policy: {f"{metric}|{slc}": stats for (metric, slc), stats in aggregates.items()}
            for policy, aggregates in agg_by_policy.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _scenario_echo(scenario: Scenario) -> dict:
    echo = asdict(scenario)
    echo["attack"]["attacks"] = [a.value for a in scenario.attack.attacks]
    echo["attack"]["target_slice"] = scenario.attack.target_slice.name
    echo["attack"]["stop_s"] = (
        None if scenario.attack.stop_s == float("inf") else scenario.attack.stop_s
    )
    return echo


def run_command(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="slicetwin",
        description="Deterministic edge-twin 6G network slicing simulator",
    )
    parser.add_argument("--config", help="YAML scenario file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--reps", type=int, help="override the replication count")
    parser.add_argument(
        "--policy",
        help="policy name or comma-separated list; "
        f"valid: {', '.join(POLICIES)} (multi-policy runs emit comparison.csv)",
    )
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument(
        "--densities",
        help="comma-separated device counts; runs the density sweep and writes sweep.csv",
    )
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.config) if args.config else Scenario()
        scenario.validate()
    except FileNotFoundError as exc:
        print(f"error: scenario file not found: {exc.filename}", file=sys.stderr)
        return 1
    except (ConfigError, yaml.YAMLError) as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return 1

    if args.seed is not None:
        scenario = replace(scenario, master_seed=args.seed)
    if args.reps is not None:
        scenario = replace(scenario, replications=args.reps)

    policies = [scenario.policy]
    if args.policy:
        policies = [p.strip() for p in args.policy.split(",") if p.strip()]
        for p in policies:
            if p not in POLICIES:
                print(
                    f"error: unknown policy '{p}'; valid policies: {', '.join(POLICIES)}",
                    file=sys.stderr,
                )
                return 2

    out_dir = os.environ.get("SLICETWIN_OUT", args.out)
    os.makedirs(out_dir, exist_ok=True)

    if args.densities:
        try:
            densities = [int(d) for d in args.densities.split(",")]
        except ValueError:
            print("error: --densities must be comma-separated integers", file=sys.stderr)
            return 2
        sweep_scenario = replace(scenario, policy=policies[0])
        rows = density_sweep(sweep_scenario, densities)
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["density", "p99_lss_ms"])
            for row in rows:
                writer.writerow([row["density"], repr(float(row["p99_lss_ms"]))])
        print(f"wrote {os.path.join(out_dir, 'sweep.csv')} ({len(rows)} densities)")
        return 0

    reports_by_policy: dict[str, list[MetricsReport]] = {}
    agg_by_policy: dict[str, dict] = {}
    for policy in policies:
        result = replicate(replace(scenario, policy=policy))
        reports_by_policy[policy] = result.reports
        agg_by_policy[policy] = result.aggregates
        overheads = [r.scheduler_overhead for r in result.reports]
        print(
            f"{policy}: {len(result.reports)} replication(s), "
            f"scheduler overhead {100 * sum(overheads) / len(overheads):.1f}% of wall clock"
        )

    _write_metrics_csv(os.path.join(out_dir, "metrics.csv"), reports_by_policy)
    _write_series_csv(os.path.join(out_dir, "series.csv"), reports_by_policy)
    _write_summary_json(os.path.join(out_dir, "summary.json"), scenario, agg_by_policy)
    if len(policies) > 1:
        table = emit_comparison(reports_by_policy)
        with open(os.path.join(out_dir, "comparison.csv"), "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(table.to_csv_rows())
    print(f"wrote outputs to {out_dir}")
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
