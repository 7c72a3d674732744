"""Command-line surface.

Every artifact-producing command writes a run_manifest.json (command, full
configuration, seeds, tool version, output hashes, wall time) sufficient to
reproduce its outputs byte for byte. Exit codes: 0 success, 2 usage,
3 data/protocol, 4 degenerate result.
"""

from __future__ import annotations

import csv
import io
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from ._fsio import atomic_write_bytes, atomic_write_text, sha256_file
from .diffeo import (
    DiffeoSpec,
    evaluate_displacement,
    expected_delta,
    expected_delta_asymptotic,
    sample_fields,
    save_field,
    save_grid,
    temperature_for_delta,
    validity,
    validity_bounds,
    xi_field,
)
from .errors import DegeneratePredictorError, ParameterError, ProtocolError
from .interpolation import BILINEAR, Gaussian, Image, apply_diffeo, gaussian_smooth, load_image, save_image
from .probe_protocol import collect_probe, emit_probe
from .rng import derive_stream
from .stability import ProbeConfig, kind_to_dict
from .stripe import NetConfig, OptimizerConfig, stripe_experiment


def _load_config(ctx, param, value):
    """--config JSON supplies defaults (keyed by flag name); flags override."""
    if value:
        cfg = json.loads(Path(value).read_text())
        section = cfg.get(ctx.info_name, cfg)
        by_flag = {}
        for p in ctx.command.params:
            for opt in p.opts:
                by_flag[opt.lstrip("-")] = p.name
        mapped = {}
        for key, val in section.items():
            if key not in by_flag:
                raise click.UsageError(f"unknown key {key!r} in config file {value}")
            mapped[by_flag[key]] = val
        ctx.default_map = {**mapped, **(ctx.default_map or {})}
    return value


def config_option(f):
    return click.option(
        "--config", type=click.Path(exists=True, dir_okay=False), callback=_load_config,
        is_eager=True, expose_value=False,
        help="JSON file with default values for this command's options.",
    )(f)


def _parse_grid(text: str) -> list[float]:
    """Comma list '1e-4,1e-3' or log range 'lo:hi:count'."""
    if ":" in text:
        lo, hi, count = text.split(":")
        return list(np.geomspace(float(lo), float(hi), int(count)))
    return [float(x) for x in text.split(",")]


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",")]


def _interp_kind(name: str, sigma: float):
    if name == "bilinear":
        return BILINEAR
    if name == "gaussian":
        return Gaussian(sigma=sigma)
    raise click.UsageError(f"unknown interpolation {name!r}")


class _Manifest:
    """Accumulates outputs for the per-command reproduction manifest."""

    def __init__(self, command: str, params: dict, out_dir: Path):
        self.command = command
        self.params = params
        self.out_dir = out_dir
        self.outputs: list[str] = []
        self.start = time.perf_counter()

    def add(self, *paths):
        for p in paths:
            self.outputs.append(str(Path(p).relative_to(self.out_dir)))

    def write(self, extra: dict | None = None):
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "params": self.params,
            "outputs": {name: sha256_file(self.out_dir / name) for name in sorted(self.outputs)},
            "wall_time_s": round(time.perf_counter() - self.start, 3),
        }
        if extra:
            doc.update(extra)
        atomic_write_text(self.out_dir / "run_manifest.json", json.dumps(doc, indent=2) + "\n")


def _write_csv(path: Path, rows: list[dict]):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    atomic_write_bytes(path, buf.getvalue().encode())


@click.group()
@click.version_option(__version__)
def cli():
    """Max-entropy diffeomorphisms, deformation rendering, and stability probes."""


@cli.command()
@config_option
@click.option("--n", type=int, required=True, help="Pixels per side.")
@click.option("--T", "temperature", type=float, default=None, help="Ensemble temperature.")
@click.option("--delta", type=float, default=None, help="Target RMS pixel displacement (sets T).")
@click.option("--c", "cutoff", type=int, required=True, help="Spatial-frequency cutoff.")
@click.option("--count", type=int, default=1, show_default=True, help="Number of fields to sample.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def sample(n, temperature, delta, cutoff, count, seed, out_dir):
    """Sample fields; write coefficients, displacement grids, validity reports."""
    if (temperature is None) == (delta is None):
        raise click.UsageError("give exactly one of --T or --delta")
    if count < 1:
        raise click.UsageError("--count must be >= 1")
    if delta is not None:
        temperature = temperature_for_delta(n, cutoff, delta)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {"n": n, "T": temperature, "delta": delta, "c": cutoff,
              "count": count, "seed": seed}
    manifest = _Manifest("sample", params, out)
    spec = DiffeoSpec(n=n, T=temperature, c=cutoff, seed=seed)
    for k, field in enumerate(sample_fields(spec, count)):
        manifest.add(*save_field(field, out / f"field_{k:04d}.json"))
        manifest.add(save_grid(evaluate_displacement(field), out / f"displacement_{k:04d}.npy"))
        report = validity(spec, field)
        path = out / f"validity_{k:04d}.json"
        atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")
        manifest.add(path)
    manifest.write()
    click.echo(f"wrote {count} field(s) to {out}")


@cli.command()
@config_option
@click.option("--image", "images", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True, help="Input raster (PNG or NPY); repeatable.")
@click.option("--field", "fields", type=click.Path(exists=True, dir_okay=False),
              multiple=True, help="Field header JSON; repeatable.")
@click.option("--grid-T", "grid_t", default=None, help="Montage temperatures (list or lo:hi:count).")
@click.option("--grid-c", "grid_c", default=None, help="Montage cutoffs, comma-separated.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for montage fields.")
@click.option("--interp", type=click.Choice(["bilinear", "gaussian"]), default="bilinear",
              show_default=True)
@click.option("--sigma", type=float, default=Gaussian().sigma, show_default=True,
              help="Gaussian kernel width.")
@click.option("--png/--no-png", default=True, show_default=True, help="Also write PNG previews.")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def render(images, fields, grid_t, grid_c, seed, interp, sigma, png, out_dir):
    """Deform images by saved fields, or render a (T, c) montage grid."""
    if not fields and not (grid_t and grid_c):
        raise click.UsageError("give --field file(s) or both --grid-T and --grid-c")
    kind = _interp_kind(interp, sigma)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {"images": list(images), "fields": list(fields), "grid_T": grid_t,
              "grid_c": grid_c, "seed": seed, "interp": kind_to_dict(kind), "png": png}
    manifest = _Manifest("render", params, out)

    from .diffeo import load_field

    loaded = [load_image(p) for p in images]
    names = [Path(p).stem for p in images]

    def emit(image, name, grid, tag):
        warped = apply_diffeo(image, grid, kind)
        manifest.add(save_image(warped, out / f"{name}__{tag}.npy"))
        if png:
            manifest.add(save_image(warped, out / f"{name}__{tag}.png"))
        if isinstance(kind, Gaussian):
            baseline = gaussian_smooth(image, kind.sigma)
            manifest.add(save_image(baseline, out / f"{name}__baseline.npy"))
            if png:
                manifest.add(save_image(baseline, out / f"{name}__baseline.png"))

    for fpath in fields:
        field = load_field(fpath)
        grid = evaluate_displacement(field)
        for image, name in zip(loaded, names):
            if image.n != grid.n:
                raise ProtocolError(
                    f"image {name} side {image.n} != field grid side {grid.n}"
                )
            emit(image, name, grid, Path(fpath).stem)

    cells = []
    if grid_t and grid_c:
        ts = _parse_grid(grid_t)
        cs = _parse_int_list(grid_c)
        for ti, T in enumerate(ts):
            for ci, c in enumerate(cs):
                n = loaded[0].n
                spec = DiffeoSpec(n=n, T=T, c=c, seed=seed)
                field = sample_fields(spec, 1, start_index=ti * len(cs) + ci)[0]
                grid = evaluate_displacement(field)
                tag = f"T{ti}_c{ci}"
                for image, name in zip(loaded, names):
                    emit(image, name, grid, tag)
                report = validity(spec, field)
                t_lo, t_hi = report.T_lower, report.T_upper
                cells.append({
                    "tag": tag, "T": T, "c": c,
                    **report.to_dict(),
                    "exceeds_bijectivity_bound": bool(t_hi is not None and T > t_hi),
                    "below_delta_half_bound": bool(t_lo is not None and T < t_lo),
                    "in_green_region": bool(
                        t_lo is not None and t_hi is not None and t_lo <= T <= t_hi
                    ),
                })
        path = out / "montage_cells.json"
        atomic_write_text(path, json.dumps(cells, indent=2) + "\n")
        manifest.add(path)
    manifest.write()
    click.echo(f"rendered into {out}")


@cli.command("phase-diagram")
@config_option
@click.option("--n", type=int, required=True)
@click.option("--T-grid", "t_grid", required=True, help="Temperatures (list or lo:hi:count).")
@click.option("--c-grid", "c_grid", required=True, help="Cutoffs, comma-separated.")
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def phase_diagram(n, t_grid, c_grid, samples, seed, out_dir):
    """Per-(T, c) cell: median max Xi, P(bijective), deltas, validity bounds."""
    ts = _parse_grid(t_grid)
    cs = _parse_int_list(c_grid)
    if samples < 1 or not ts or not cs:
        raise click.UsageError("grids and --samples must be non-empty/positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {"n": n, "T_grid": ts, "c_grid": cs, "samples": samples, "seed": seed}
    manifest = _Manifest("phase-diagram", params, out)
    rows = []
    for ti, T in enumerate(ts):
        for ci, c in enumerate(cs):
            spec = DiffeoSpec(n=n, T=T, c=c, seed=seed)
            fields = sample_fields(spec, samples, start_index=(ti * len(cs) + ci) * samples)
            max_xi = np.array([float(xi_field(f).max()) for f in fields])
            t_lo, t_hi = validity_bounds(n, c)
            rows.append({
                "T": T,
                "c": c,
                "median_max_xi": float(np.median(max_xi)),
                "p_bijective": float(np.mean(max_xi < 1.0)),
                "delta_exact": expected_delta(spec),
                "delta_asymptotic": expected_delta_asymptotic(spec),
                "T_lower": t_lo,
                "T_upper": t_hi,
            })
    _write_csv(out / "phase.csv", rows)
    atomic_write_text(out / "phase.json", json.dumps(rows, indent=2) + "\n")
    manifest.add(out / "phase.csv", out / "phase.json")
    manifest.write()
    click.echo(f"phase diagram ({len(rows)} cells) in {out}")


@cli.group()
def probe():
    """File-exchange stability probe for external predictors."""


@probe.command("emit")
@config_option
@click.option("--images", type=click.Path(exists=True, dir_okay=False), required=True,
              help="NPY batch (N, C, n, n) or (N, n, n).")
@click.option("--c", "cutoff", type=int, required=True)
@click.option("--delta", type=float, default=1.0, show_default=True)
@click.option("--interp", type=click.Choice(["bilinear", "gaussian"]), default="bilinear",
              show_default=True)
@click.option("--sigma", type=float, default=Gaussian().sigma, show_default=True)
@click.option("--n-images", type=int, default=None, help="Use only the first N images.")
@click.option("--n-transforms", type=int, default=4, show_default=True)
@click.option("--aggregation", type=click.Choice(["median", "mean"]), default="median",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def probe_emit(images, cutoff, delta, interp, sigma, n_images, n_transforms, aggregation, seed, out_dir):
    """Write probe tensors + manifest for an external model to evaluate."""
    arr = np.load(images, allow_pickle=False)
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4:
        raise ProtocolError(f"image batch must be (N, C, n, n) or (N, n, n), got {arr.shape}")
    cfg = ProbeConfig(
        n=int(arr.shape[2]), c=cutoff, delta=delta, kind=_interp_kind(interp, sigma),
        n_images=n_images, n_transforms_per_image=n_transforms,
        aggregation=aggregation, seed=seed,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest("probe emit", {"images": images, "config": {
        **kind_to_dict(cfg.kind), "c": cutoff, "delta": delta, "n_images": n_images,
        "n_transforms": n_transforms, "aggregation": aggregation, "seed": seed}}, out)
    path = emit_probe(cfg, arr, out)
    manifest.add(path, out / "x.npy", out / "tau_x.npy", out / "x_noise.npy")
    manifest.write()
    click.echo(f"probe emitted to {out}; run your model on x/tau_x/x_noise and write f_*.npy")


@probe.command("collect")
@config_option
@click.option("--dir", "probe_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Report JSON path (default: <dir>/report.json).")
def probe_collect(probe_dir, out):
    """Score predictor outputs found in an emitted probe directory."""
    report = collect_probe(probe_dir)
    path = Path(out) if out else Path(probe_dir) / "report.json"
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")
    click.echo(json.dumps(report.to_dict(), indent=2))


@cli.command("stripe-experiment")
@config_option
@click.option("--d", type=int, default=30, show_default=True)
@click.option("--P", "p_list", default="128,256,512,1024,2048,4096,8192", show_default=True,
              help="Training-set sizes, comma-separated.")
@click.option("--seeds", type=int, default=8, show_default=True, help="Realizations per P.")
@click.option("--width", type=int, default=128, show_default=True)
@click.option("--learning-rate", type=float, default=OptimizerConfig().learning_rate, show_default=True)
@click.option("--max-steps", type=int, default=OptimizerConfig().max_steps, show_default=True)
@click.option("--noise-norm", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def stripe_cmd(d, p_list, seeds, width, learning_rate, max_steps, noise_norm, seed, out_dir):
    """Train stripe nets over a P grid; emit per-run CSV and a slope summary."""
    ps = _parse_int_list(p_list)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {"d": d, "P": ps, "seeds": seeds, "width": width,
              "learning_rate": learning_rate, "max_steps": max_steps,
              "noise_norm": noise_norm, "seed": seed}
    manifest = _Manifest("stripe-experiment", params, out)
    rows, summary = stripe_experiment(
        d=d, P_values=ps, n_seeds=seeds, base_seed=seed,
        net_cfg=NetConfig(width=width),
        opt_cfg=OptimizerConfig(learning_rate=learning_rate, max_steps=max_steps),
        noise_norm=noise_norm,
        progress=lambda row: click.echo(
            f"P={row['P']} seed={row['seed']}: R_f={row['R_f']:.3e} "
            f"align={row['alignment']:.2f} err={row['test_error']:.3f}", err=True),
    )
    _write_csv(out / "stripe.csv", [
        {k: row[k] for k in ("P", "seed", "R_f", "alignment", "test_error")} for row in rows
    ])
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    manifest.add(out / "stripe.csv", out / "summary.json")
    manifest.write()
    click.echo(json.dumps(summary, indent=2))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.UsageError as e:
        e.show()
        sys.exit(2)
    except ParameterError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    except (ProtocolError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(3)
    except DegeneratePredictorError as e:
        click.echo(f"degenerate result: {e}", err=True)
        sys.exit(4)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
