"""Command-line front end: simulate scenarios, analyze tag files, build the
characterization report.

Every command writes a manifest.json into its output directory with SHA-256
hashes of the artifacts, so reruns can be checked for bit-identical output.
Existing outputs are never overwritten unless --force is given. The default
output root comes from the SNSPDSIM_OUT environment variable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, analysis, plots
from .errors import AnalysisError, ScenarioError, TagFormatError
from .reproduce import reproduce
from .scenario import (
    Scenario,
    default_scenario_dict,
    scenario_from_dict,
    save_scenario,
)
from .simulate import simulate
from .tagio import load_tags, stream_stats, write_tags

TAG_FILE = "tags.bin"
MANIFEST = "manifest.json"

ANALYZE_KINDS = ("spde", "sde", "bias", "mcr", "jitter", "crosstalk", "heatmap")


class CliError(Exception):
    """Fatal command error; message goes to stderr, exit code 1."""


# ---------------------------------------------------------------------------
# manifest helpers


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_out(out: str | None, command: str) -> str:
    if out:
        return out
    root = os.environ.get("SNSPDSIM_OUT")
    if not root:
        raise CliError(
            "no output directory: pass --out or set SNSPDSIM_OUT"
        )
    return os.path.join(root, command)


def _prepare_out(out_dir: str, force: bool) -> None:
    if os.path.exists(os.path.join(out_dir, MANIFEST)) and not force:
        raise CliError(
            f"{out_dir} already holds a run (manifest.json present); use --force to overwrite"
        )
    os.makedirs(out_dir, exist_ok=True)


def _write_manifest(out_dir: str, payload: dict) -> None:
    outputs = {}
    for name in sorted(os.listdir(out_dir)):
        path = os.path.join(out_dir, name)
        if name != MANIFEST and os.path.isfile(path):
            outputs[name] = _sha256(path)
    payload["version"] = __version__
    payload["outputs"] = outputs
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_run(run_dir: str) -> tuple[dict, "np.ndarray"]:
    """Read a simulate output directory: (manifest dict, TagStream)."""
    man_path = os.path.join(run_dir, MANIFEST)
    tag_path = os.path.join(run_dir, TAG_FILE)
    if not os.path.isfile(man_path):
        raise CliError(f"{run_dir}: no manifest.json; not a simulate output")
    if not os.path.isfile(tag_path):
        raise CliError(f"{run_dir}: no {TAG_FILE}")
    with open(man_path) as fh:
        manifest = json.load(fh)
    if "scenario" not in manifest or "duration_s" not in manifest:
        raise CliError(f"{run_dir}: manifest lacks scenario/duration metadata")
    return manifest, load_tags(tag_path)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, list(r)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    if args.duration <= 0:
        raise CliError(f"duration must be positive, got {args.duration}")
    if args.scenario:
        with open(args.scenario) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as e:
                raise CliError(f"{args.scenario}: not valid JSON ({e})") from e
    else:
        cfg = default_scenario_dict()
    scenario = scenario_from_dict(cfg)

    out_dir = _resolve_out(args.out, "simulate")
    _prepare_out(out_dir, args.force)

    result = simulate(scenario, args.duration, seed=args.seed, jobs=args.jobs)
    write_tags(result.stream, os.path.join(out_dir, TAG_FILE))

    n_pix = scenario.geometry.n_pixels
    rates = result.per_channel_rate_cps[:n_pix]
    print(f"{result.stream.n} tags in {args.duration} s, {result.dropped_tags} dropped")
    print("per-channel rates [cps]:")
    for row in range(scenario.geometry.rows):
        cols = rates[row * scenario.geometry.cols:(row + 1) * scenario.geometry.cols]
        print("  " + " ".join(f"{r:10.0f}" for r in cols))

    _write_manifest(out_dir, {
        "command": "simulate",
        "scenario": cfg,
        "duration_s": args.duration,
        "seed": args.seed,
        "jobs": args.jobs,
        "n_tags": result.stream.n,
        "dropped_tags": result.dropped_tags,
    })
    print(f"wrote {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# analyze: shared input plumbing


def _scan_runs(root: str) -> list[tuple[str, dict, object]]:
    """All simulate runs directly under root, as (dir, manifest, stream)."""
    runs = []
    for name in sorted(os.listdir(root)):
        d = os.path.join(root, name)
        if os.path.isdir(d) and os.path.isfile(os.path.join(d, MANIFEST)):
            runs.append((d, *_load_run(d)))
    if not runs:
        raise CliError(f"{root}: no simulate run directories found")
    return runs


def _beam_flux(manifest: dict) -> float:
    return float(manifest["scenario"]["beam"]["flux_cps"])


def _recording(manifest: dict, stream) -> analysis.Recording:
    return analysis.Recording(stream, float(manifest["duration_s"]))


def _split_dark(runs):
    lit = [r for r in runs if _beam_flux(r[1]) > 0]
    dark = [r for r in runs if _beam_flux(r[1]) == 0]
    if not dark:
        raise CliError("no dark run (flux_cps == 0) among inputs")
    return lit, dark[0]


def _analyze_spde(inputs, out_dir, args):
    runs = _scan_runs(inputs[0])
    lit, dark = _split_dark(runs)
    cfg = scenario_from_dict(lit[0][1]["scenario"])
    flux = _beam_flux(lit[0][1])
    recs = {}
    for d, man, stream in lit:
        beam = man["scenario"]["beam"]
        if beam["kind"] != "gaussian":
            raise CliError(f"{d}: spde scan needs gaussian spot runs, got {beam['kind']}")
        if _beam_flux(man) != flux:
            raise CliError(f"{d}: spot flux differs between runs")
        cx, cy = beam["center_um"]
        ch = min(
            range(cfg.geometry.n_pixels),
            key=lambda c: (cfg.geometry.pixel_center(c)[0] - cx) ** 2
            + (cfg.geometry.pixel_center(c)[1] - cy) ** 2,
        )
        recs[ch] = _recording(man, stream)
    res = analysis.spde_map(recs, _recording(dark[1], dark[2]), flux, cfg.geometry)
    _write_csv(
        os.path.join(out_dir, "spde_map.csv"),
        ["channel", "spde"],
        [[ch, v] for ch, v in enumerate(res.per_pixel.ravel())],
    )
    plots.plot_pixel_map(res.per_pixel.ravel(), cfg.geometry,
                         os.path.join(out_dir, "spde_map.svg"), label="SPDE [%]")
    return {"mean": res.mean, "stddev": res.stddev,
            "min": float(res.per_pixel.min()), "max": float(res.per_pixel.max())}


def _analyze_sde(inputs, out_dir, args):
    if len(inputs) == 1:
        lit, dark = _split_dark(_scan_runs(inputs[0]))
        if len(lit) != 1:
            raise CliError(f"sde needs one lit and one dark run, got {len(lit)} lit")
        lit = lit[0]
    else:
        lit = (_load_run(inputs[0]))
        lit = (inputs[0], lit[0], lit[1])
        dman, dstream = _load_run(inputs[1])
        dark = (inputs[1], dman, dstream)
        if _beam_flux(dark[1]) != 0:
            raise CliError(f"{inputs[1]}: second input must be the dark run (flux 0)")
    flux = _beam_flux(lit[1])
    sde = analysis.array_sde(_recording(lit[1], lit[2]),
                             _recording(dark[1], dark[2]), flux)
    cfg = scenario_from_dict(lit[1]["scenario"])
    counts = analysis.heatmap(lit[2], cfg.geometry)
    _write_csv(
        os.path.join(out_dir, "pixel_counts.csv"),
        ["channel", "count"],
        [[ch, int(c)] for ch, c in enumerate(counts.ravel())],
    )
    plots.plot_pixel_map(counts.ravel(), cfg.geometry,
                         os.path.join(out_dir, "sde_heatmap.svg"),
                         label="counts", fmt="{:.0f}", scale=1.0)
    return {"array_sde": sde, "input_flux_cps": flux}


def _analyze_bias(inputs, out_dir, args):
    runs = _scan_runs(inputs[0])
    by_bias: dict[float, dict[str, tuple]] = {}
    for d, man, stream in runs:
        bias = float(man["scenario"]["bias_ua"])
        slot = "lit" if _beam_flux(man) > 0 else "dark"
        by_bias.setdefault(bias, {})[slot] = (man, stream)
    points = []
    for bias, slots in sorted(by_bias.items()):
        if "lit" not in slots or "dark" not in slots:
            raise CliError(f"bias {bias} uA: needs both a lit and a dark run")
        points.append(analysis.BiasPoint(
            bias, _recording(*slots["lit"]), _recording(*slots["dark"])))
    res = analysis.bias_sweep(points)
    _write_csv(
        os.path.join(out_dir, "bias_sweep.csv"),
        ["bias_ua", "pcr_normalized", "dcr_cps"],
        [[b, p, d] for b, p, d in zip(res.bias_ua, res.pcr_normalized, res.dcr_cps)],
    )
    plots.plot_bias_sweep(res, os.path.join(out_dir, "bias_sweep.svg"))
    return {"plateau_cps": res.plateau_cps,
            "bias_ua": res.bias_ua.tolist(), "dcr_cps": res.dcr_cps.tolist()}


def _analyze_mcr(inputs, out_dir, args):
    runs = _scan_runs(inputs[0])
    lit = [r for r in runs if _beam_flux(r[1]) > 0]
    if len(lit) < 4:
        raise CliError(f"mcr sweep needs at least 4 lit runs, got {len(lit)}")
    cfg = scenario_from_dict(lit[0][1]["scenario"])
    n_pix = cfg.geometry.n_pixels
    lit.sort(key=lambda r: _beam_flux(r[1]))
    fluxes = np.array([_beam_flux(man) for _, man, _ in lit])
    rates = np.empty((fluxes.size, n_pix))
    for i, (_, man, stream) in enumerate(lit):
        counts = analysis.heatmap(stream, cfg.geometry).ravel()
        rates[i] = counts / float(man["duration_s"])
    pixel_mcr = np.array([
        analysis.mcr_3db(list(zip(fluxes, rates[:, ch]))) for ch in range(n_pix)
    ])
    totals = rates.sum(axis=1)
    array_mcr = float(pixel_mcr.sum())
    _write_csv(
        os.path.join(out_dir, "mcr_sweep.csv"),
        ["flux_cps", "array_rate_cps"],
        [[f, t] for f, t in zip(fluxes, totals)],
    )
    plots.plot_mcr_sweep(fluxes, totals, array_mcr, os.path.join(out_dir, "mcr_sweep.svg"))
    return {"array_mcr_cps": array_mcr,
            "pixel_mcr_min_cps": float(pixel_mcr.min()),
            "pixel_mcr_max_cps": float(pixel_mcr.max())}


def _analyze_jitter(inputs, out_dir, args):
    man, stream = _load_run(inputs[0])
    source = man["scenario"].get("source", {})
    if source.get("kind") != "pulsed":
        raise CliError(
            f"{inputs[0]}: jitter needs a pulsed-source run, scenario source is "
            f"{source.get('kind', 'cw')!r}"
        )
    rep_period_ps = 1.0e6 / float(source["rep_rate_mhz"])
    res = analysis.jitter_fwhm(stream, rep_period_ps=rep_period_ps)
    _write_csv(
        os.path.join(out_dir, "jitter_fwhm.csv"),
        ["channel", "fwhm_ps"],
        sorted(res.fwhm_ps.items()),
    )
    h_lo = res.histograms[res.min_channel]
    h_hi = res.histograms[res.max_channel]
    n = h_lo.size
    t = (np.arange(n) - n // 2) * res.bin_width_ps
    keep = np.abs(t) <= 600.0
    _write_csv(
        os.path.join(out_dir, "jitter_hist.csv"),
        ["time_ps", f"counts_ch{res.min_channel}", f"counts_ch{res.max_channel}"],
        [[tt, int(a), int(b)] for tt, a, b in zip(t[keep], h_lo[keep], h_hi[keep])],
    )
    plots.plot_jitter(res, os.path.join(out_dir, "jitter.svg"))
    vals = np.array(list(res.fwhm_ps.values()))
    return {"fwhm_min_ps": float(vals.min()), "fwhm_max_ps": float(vals.max()),
            "min_channel": res.min_channel, "max_channel": res.max_channel,
            "skipped_tags": res.skipped_tags}


def _analyze_crosstalk(inputs, out_dir, args):
    man, stream = _load_run(inputs[0])
    pair = tuple(args.pair)
    res = analysis.crosstalk_bound(
        stream, pair, duration_s=float(man["duration_s"]), window_us=args.window_us
    )
    t = (np.arange(res.histogram.size) + 0.5) * res.bin_width_ns
    _write_csv(
        os.path.join(out_dir, "crosstalk_hist.csv"),
        ["delay_ns", "measured", "predicted"],
        [[tt, int(m), p] for tt, m, p in zip(t, res.histogram, res.prediction)],
    )
    plots.plot_crosstalk(res, os.path.join(out_dir, "crosstalk.svg"))
    return {"pair": list(pair), "excess_fraction": res.excess_fraction,
            "upper_bound_95": res.upper_bound_95,
            "n_source_events": res.n_source_events}


def _analyze_heatmap(inputs, out_dir, args):
    man, stream = _load_run(inputs[0])
    cfg = scenario_from_dict(man["scenario"])
    counts = analysis.heatmap(stream, cfg.geometry)
    _write_csv(
        os.path.join(out_dir, "pixel_counts.csv"),
        ["channel", "count"],
        [[ch, int(c)] for ch, c in enumerate(counts.ravel())],
    )
    plots.plot_pixel_map(counts.ravel(), cfg.geometry,
                         os.path.join(out_dir, "heatmap.svg"),
                         label="counts", fmt="{:.0f}", scale=1.0)
    return {"total": int(counts.sum()), "max_pixel": int(counts.max())}


_ANALYZERS = {
    "spde": _analyze_spde,
    "sde": _analyze_sde,
    "bias": _analyze_bias,
    "mcr": _analyze_mcr,
    "jitter": _analyze_jitter,
    "crosstalk": _analyze_crosstalk,
    "heatmap": _analyze_heatmap,
}


def cmd_analyze(args) -> int:
    out_dir = _resolve_out(args.out, f"analyze-{args.kind}")
    _prepare_out(out_dir, args.force)
    result = _ANALYZERS[args.kind](args.inputs, out_dir, args)
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir, {
        "command": "analyze",
        "kind": args.kind,
        "inputs": [os.path.abspath(p) for p in args.inputs],
    })
    print(json.dumps(result, indent=2, sort_keys=True))
    print(f"wrote {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# reproduce / scenario


def cmd_reproduce(args) -> int:
    out_dir = _resolve_out(args.out, "reproduce")
    _prepare_out(out_dir, args.force)
    report = reproduce(out_dir, seed=args.seed, quick=args.quick, jobs=args.jobs)
    _write_manifest(out_dir, {
        "command": "reproduce",
        "seed": args.seed,
        "quick": args.quick,
    })
    n_fail = report["n_checks"] - report["n_pass"]
    print(f"{report['n_pass']}/{report['n_checks']} checks pass; see {out_dir}/report.md")
    if report.get("failures"):
        print("failed stages: " + ", ".join(sorted(report["failures"])), file=sys.stderr)
        return 1
    return 0 if n_fail == 0 else 1


def cmd_scenario(args) -> int:
    if args.validate:
        scenario_from_dict_path(args.validate)
        print(f"{args.validate}: valid")
        return 0
    cfg = default_scenario_dict()
    if args.out:
        save_scenario(cfg, args.out)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(cfg, indent=2, sort_keys=True))
    return 0


def scenario_from_dict_path(path: str) -> Scenario:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise CliError(f"{path}: not valid JSON ({e})") from e
    return scenario_from_dict(cfg)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="snspdsim",
        description="Photon-counting array simulator and characterization toolkit",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write a tag file")
    sim.add_argument("--scenario", help="scenario JSON (default: built-in flood)")
    sim.add_argument("--duration", type=float, required=True, help="seconds")
    sim.add_argument("--seed", type=int, default=1)
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--force", action="store_true", help="overwrite an existing run")
    sim.set_defaults(fn=cmd_simulate)

    ana = sub.add_parser("analyze", help="run one analysis on simulate outputs")
    ana.add_argument("--kind", choices=ANALYZE_KINDS, required=True)
    ana.add_argument("--inputs", nargs="+", required=True,
                     help="simulate run directory (or scan root, kind-dependent)")
    ana.add_argument("--pair", type=int, nargs=2, default=(12, 13),
                     help="source and neighbor channel for crosstalk")
    ana.add_argument("--window-us", type=float, default=1.0)
    ana.add_argument("--out", help="output directory")
    ana.add_argument("--force", action="store_true")
    ana.set_defaults(fn=cmd_analyze)

    rep = sub.add_parser("reproduce", help="run the five canonical scenarios")
    rep.add_argument("--out", help="output directory")
    rep.add_argument("--seed", type=int, default=1)
    rep.add_argument("--quick", action="store_true", help="16x shorter runs")
    rep.add_argument("--jobs", type=int, default=1)
    rep.add_argument("--force", action="store_true")
    rep.set_defaults(fn=cmd_reproduce)

    sc = sub.add_parser("scenario", help="emit or validate scenario JSON")
    sc.add_argument("--out", help="write the default scenario here")
    sc.add_argument("--validate", help="check an existing scenario file")
    sc.set_defaults(fn=cmd_scenario)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ScenarioError, TagFormatError, AnalysisError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
