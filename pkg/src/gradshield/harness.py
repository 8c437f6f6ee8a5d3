"""Pipeline orchestration: config -> victim -> attack -> robustness/eval.

Everything the CLI does lives here as plain functions so the pipelines are
drivable from tests as well. All randomness is derived from the experiment
seed; rerunning a config reproduces every output byte.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dgs as dgs_mod
from . import io as gio
from . import metrics, nn, tasks
from . import tensor as T
from .attack import AttackRun, add_awgn, jpeg_proxy, lattice_attack, train_remover
from .config import RESULTS_FORMAT, ExperimentConfig
from .metrics import MetricsRecord
from .tensor import Tensor
from .watermark import VictimModel, embed, extract, train_victim

JPEG_QUALITIES = (10, 20, 30, 40)
NOISE_LEVELS_DB = (0, 10, 20, 30)
LATTICE_STEPS = (2, 6, 11, 16)

_P_SEED_TAG = 577


def build_dataset(cfg: ExperimentConfig) -> tasks.Dataset:
    return tasks.make_dataset(cfg.task, cfg.dataset_count, cfg.seed, cfg.image_size)


def build_watermark(cfg: ExperimentConfig) -> tasks.WatermarkSpec:
    return tasks.gen_watermark(cfg.image_size, cfg.dgs.watermark_pattern)


def build_dgs(cfg: ExperimentConfig, wspec: tasks.WatermarkSpec) -> dgs_mod.DGSConfig:
    dim = cfg.image_size * cfg.image_size
    p = dgs_mod.make_P(dim, cfg.dgs.lambda_min, cfg.dgs.lambda_max, cfg.seed + _P_SEED_TAG)
    return dgs_mod.DGSConfig(
        p=p,
        w=wspec.w.data,
        w0=wspec.w0.data,
        nc_threshold=cfg.dgs.nc_threshold,
        enabled=cfg.dgs.enabled,
    )


# --- gen-data --------------------------------------------------------------


def run_gen_data(cfg: ExperimentConfig, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(cfg)
    manifest = {"format_version": RESULTS_FORMAT, "config": cfg.to_dict(), "items": []}
    for split in ("victim", "attacker", "eval"):
        for i, pair in enumerate(getattr(ds, split)):
            stem = f"{split}_{i:05d}"
            gio.write_pgm(outdir / f"{stem}_x0.pgm", pair.x0)
            gio.write_pgm(outdir / f"{stem}_x.pgm", pair.x)
            manifest["items"].append(
                {"split": split, "index": i, "seed": pair.seed,
                 "x0": f"{stem}_x0.pgm", "x": f"{stem}_x.pgm"}
            )
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return outdir / "manifest.json"


# --- train-victim ----------------------------------------------------------


def run_train_victim(cfg: ExperimentConfig, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(cfg)
    wspec = build_watermark(cfg)
    model, curve = train_victim(ds, wspec, cfg.victim)
    save_victim(model, cfg, outdir)
    with open(outdir / "loss.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss\n")
        fh.writelines(f"{i},{float(v)!r}\n" for i, v in enumerate(curve))
    return model, curve


def save_victim(model: VictimModel, cfg: ExperimentConfig, outdir):
    outdir = Path(outdir)
    entries = [(f"enc.{n}", t) for n, t in model.encoder]
    entries += [(f"dec.{n}", t) for n, t in model.decoder]
    entries += [("wm.w", model.wspec.w), ("wm.w0", model.wspec.w0)]
    gio.save_checkpoint(dict(entries), outdir / "victim.ckpt")
    meta = {
        "format_version": RESULTS_FORMAT,
        "config": cfg.to_dict(),
        "train_meta": model.train_meta,
        "watermark_pattern": model.wspec.pattern,
    }
    with open(outdir / "victim.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_victim(victim_dir):
    victim_dir = Path(victim_dir)
    ckpt_path = victim_dir / "victim.ckpt"
    meta_path = victim_dir / "victim.json"
    if not ckpt_path.exists() or not meta_path.exists():
        raise FileNotFoundError(f"victim checkpoint not found under {victim_dir}")
    flat = gio.load_checkpoint(ckpt_path)
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    from .config import config_from_dict

    cfg = config_from_dict(meta["config"])
    encoder, decoder = nn.ModelParams(), nn.ModelParams()
    w = w0 = None
    for name, t in flat:
        if name.startswith("enc."):
            encoder.add(name[4:], t)
        elif name.startswith("dec."):
            decoder.add(name[4:], t)
        elif name == "wm.w":
            w = Tensor(t.data)
        elif name == "wm.w0":
            w0 = Tensor(t.data)
    if w is None or w0 is None:
        raise ValueError(f"{ckpt_path}: missing watermark tensors")
    wspec = tasks.WatermarkSpec(w=w, w0=w0, pattern=meta.get("watermark_pattern", "logo"))
    model = VictimModel(encoder=encoder, decoder=decoder, wspec=wspec,
                        train_meta=meta.get("train_meta", {}))
    return model, cfg


# --- attack ----------------------------------------------------------------


def run_attack(cfg: ExperimentConfig, victim: VictimModel, outdir) -> AttackRun:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(cfg)
    dcfg = build_dgs(cfg, victim.wspec)
    run = train_remover(victim, dcfg, cfg.attack, ds.attacker)
    gio.save_checkpoint(dict(run.remover), outdir / "remover.ckpt")
    record = attack_metrics(cfg, victim, run, ds)
    gio.emit_results([record], (run.attacker_view_curve, run.defender_view_curve),
                     str(outdir) + os.sep)
    return run


def attack_metrics(cfg: ExperimentConfig, victim: VictimModel, run: AttackRun,
                   ds: tasks.Dataset) -> MetricsRecord:
    """Post-attack metrics on the eval split (remover applied to fresh Y)."""
    y = embed(victim, np.stack([p.x.data for p in ds.eval]))
    g = T.Graph()
    ry = nn.remover_forward(g, run.remover, Tensor(y.data))
    decoded = extract(victim.decoder, ry)
    ncs = [metrics.nc(z, victim.wspec.w.data) for z in decoded.data]
    return MetricsRecord(
        name="post_attack_eval",
        psnr_db=float(np.mean([metrics.psnr(a, b) for a, b in zip(ry.data, y.data)])),
        ms_ssim=float(np.mean([metrics.ms_ssim(a, b) for a, b in zip(ry.data, y.data)])),
        nc=float(np.mean(ncs)),
        sr=metrics.success_rate(list(decoded.data), victim.wspec.w.data,
                                cfg.dgs.nc_threshold),
        context={"config": cfg.to_dict(), "attack_meta": run.meta},
    )


# --- robustness sweep ------------------------------------------------------


def protected_responses(victim: VictimModel, dcfg, pairs) -> np.ndarray:
    """API responses (reoriented marks) for the watermarked eval images."""
    y = embed(victim, np.stack([p.x.data for p in pairs]))
    resp = dgs_mod.decoder_api(victim.decoder, dcfg, Tensor(y.data), T.Graph())
    return resp.data


def _sweep_cell(zstars, attack_fn, w, threshold):
    attacked = [attack_fn(i, z) for i, z in enumerate(zstars)]
    psnrs = [metrics.psnr(z, a) for z, a in zip(zstars, attacked)]
    ssims = [metrics.ms_ssim(np.clip(z, 0.0, 1.0), a) for z, a in zip(zstars, attacked)]
    sr = metrics.success_rate(attacked, w, threshold)
    return {
        "psnr": float(np.mean(psnrs)),
        "ms_ssim": float(np.mean(ssims)),
        "sr": float(sr),
    }


def run_robustness(cfg: ExperimentConfig, victim: VictimModel, suites, out_path=None):
    """Sweep JPEG quality / noise level / lattice step over eval responses.

    Mirrors the paper-style robustness tables: each cell reports the mean
    PSNR and MS-SSIM between the returned mark and its attacked version
    plus the extraction success rate on the attacked marks.
    """
    ds = build_dataset(cfg)
    dcfg = build_dgs(cfg, victim.wspec)
    zstars = protected_responses(victim, dcfg, ds.eval)
    w = victim.wspec.w.data
    thr = cfg.dgs.nc_threshold
    base = cfg.seed

    def cell_seed(tag, level, idx):
        return np.random.SeedSequence([base, tag, level, idx]).generate_state(1)[0]

    jobs = []
    if "jpeg" in suites:
        for q in JPEG_QUALITIES:
            jobs.append(("jpeg", "quality", q,
                         lambda i, z, q=q: jpeg_proxy(z, q)))
    if "noise" in suites:
        for lvl in NOISE_LEVELS_DB:
            jobs.append(("noise", "level_db", lvl,
                         lambda i, z, lvl=lvl: add_awgn(z, lvl, cell_seed(2, lvl, i))))
    if "lattice" in suites:
        for st in LATTICE_STEPS:
            jobs.append(("lattice", "step", st,
                         lambda i, z, st=st: lattice_attack(z, st, cell_seed(3, st, i))))
    max_workers = int(os.environ.get("GRADSHIELD_THREADS", "1") or "1")
    max_workers = max(1, min(max_workers, len(jobs) or 1))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(lambda j: _sweep_cell(zstars, j[3], w, thr), jobs))
    else:
        results = [_sweep_cell(zstars, j[3], w, thr) for j in jobs]
    table: dict = {}
    for (suite, key, level, _), res in zip(jobs, results):
        table.setdefault(suite, []).append({key: level, **res})
    payload = {
        "format_version": RESULTS_FORMAT,
        "config": cfg.to_dict(),
        "eval_count": len(ds.eval),
        "table": table,
    }
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return payload


# --- eval ------------------------------------------------------------------


def run_eval(cfg: ExperimentConfig, victim: VictimModel, remover=None, out_path=None):
    """Fidelity and extraction metrics on the eval split."""
    ds = build_dataset(cfg)
    xb = np.stack([p.x.data for p in ds.eval])
    y = embed(victim, xb)
    decoded_y = extract(victim.decoder, y)
    decoded_x = extract(victim.decoder, Tensor(xb))
    w = victim.wspec.w.data
    thr = cfg.dgs.nc_threshold
    records = [
        MetricsRecord(
            name="victim_eval",
            psnr_db=float(np.mean([metrics.psnr(a, b) for a, b in zip(y.data, xb)])),
            ms_ssim=float(np.mean([metrics.ms_ssim(a, b) for a, b in zip(y.data, xb)])),
            nc=float(np.mean([metrics.nc(z, w) for z in decoded_y.data])),
            sr=metrics.success_rate(list(decoded_y.data), w, thr),
            context={"config": cfg.to_dict(),
                     "nc_clean": float(np.mean([metrics.nc(z, w) for z in decoded_x.data]))},
        )
    ]
    if remover is not None:
        g = T.Graph()
        ry = nn.remover_forward(g, remover, Tensor(y.data))
        decoded_r = extract(victim.decoder, ry)
        records.append(
            MetricsRecord(
                name="post_attack_eval",
                psnr_db=float(np.mean([metrics.psnr(a, b) for a, b in zip(ry.data, y.data)])),
                ms_ssim=float(np.mean([metrics.ms_ssim(a, b) for a, b in zip(ry.data, y.data)])),
                nc=float(np.mean([metrics.nc(z, w) for z in decoded_r.data])),
                sr=metrics.success_rate(list(decoded_r.data), w, thr),
                context={"config": cfg.to_dict()},
            )
        )
    if out_path is not None:
        gio.write_metrics_json(out_path, records)
    return records
