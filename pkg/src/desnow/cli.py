"""Command-line interface.

Subcommands: ``synth`` (build a synthetic dataset), ``train``, ``infer``,
``eval`` and ``gradcheck``. Exit code is 0 on success and nonzero with a
one-line diagnostic on stderr otherwise. For ``train``, option precedence is
command-line flags, then ``--config`` file entries (JSON or YAML), then
built-in defaults.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import dataset, pipeline
from .pipeline import TrainConfig


@click.group()
def cli():
    """Snow removal: two-stage translucency recovery + residual generation."""


@cli.command()
@click.option("--clean", "clean_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--subset", type=click.Choice(["s", "m", "l"]), required=True)
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jitter", type=float, default=0.0, show_default=True, help="per-channel snow color jitter")
def synth(clean_dir, out_dir, subset, count, seed, jitter):
    """Synthesize snowy samples from a directory of clean images."""
    manifest = dataset.build_dataset(clean_dir, out_dir, subset, count, seed, jitter=jitter)
    click.echo(f"wrote {count} samples, manifest at {manifest}")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return data


@cli.command()
@click.option("--data", "manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--iters", type=int, default=None, help="training iterations")
@click.option("--lr", type=float, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--crop", type=int, default=None)
@click.option("--tau", type=int, default=None)
@click.option("--lambda-z", type=float, default=None)
@click.option("--lambda-w", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def train(manifest, checkpoint, iters, lr, batch, crop, tau, lambda_z, lambda_w, seed, checkpoint_every, log_path, config_path):
    """Train on a synthesized manifest and save a checkpoint."""
    file_cfg = _load_config_file(config_path)
    defaults = TrainConfig()

    def pick(flag, key, fallback):
        if flag is not None:
            return flag
        return file_cfg.get(key, fallback)

    cfg = TrainConfig(
        iterations=pick(iters, "iters", defaults.iterations),
        batch=pick(batch, "batch", defaults.batch),
        crop=pick(crop, "crop", defaults.crop),
        lr=pick(lr, "lr", defaults.lr),
        seed=pick(seed, "seed", defaults.seed),
        tau=pick(tau, "tau", defaults.tau),
        lambda_z=pick(lambda_z, "lambda_z", defaults.lambda_z),
        lambda_w=pick(lambda_w, "lambda_w", defaults.lambda_w),
        checkpoint_every=pick(checkpoint_every, "checkpoint_every", defaults.checkpoint_every),
    )
    ckpt, log = pipeline.train(manifest, checkpoint, cfg, log_path=log_path)
    click.echo(f"checkpoint: {ckpt}\nlog: {log}")


@cli.command()
@click.option("--ckpt", "checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dump-intermediates", "dump_dir", type=click.Path(file_okay=False), default=None)
def infer(checkpoint, input_path, output_path, dump_dir):
    """Remove snow from one image."""
    out = pipeline.infer(checkpoint, input_path, output_path, dump_dir=dump_dir)
    click.echo(f"wrote {out}")


@cli.command("eval")
@click.option("--ckpt", "checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
def eval_cmd(checkpoint, manifest, report_path):
    """Score a checkpoint on a manifest; writes a per-image CSV report."""
    s = pipeline.evaluate(checkpoint, manifest, report_path)
    click.echo(
        f"model   psnr {s.model.psnr_db:8.4f}  ssim {s.model.ssim:6.4f}\n"
        f"mask    psnr {s.mask.psnr_db:8.4f}  ssim {s.mask.ssim:6.4f}\n"
        f"baseline psnr {s.baseline.psnr_db:8.4f}  ssim {s.baseline.ssim:6.4f}"
    )


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
def gradcheck(seed, tol):
    """Check every parameter group's gradient against finite differences."""
    report = pipeline.gradcheck(seed=seed, tol=tol)
    for g in report.groups:
        status = "ok" if g.passed else "FAIL"
        click.echo(f"{status:4s} {g.name:24s} max rel err {g.max_rel_err:.3e} ({g.checked} checked)")
    click.echo(f"{'PASS' if report.passed else 'FAIL'}: max rel err {report.max_rel_err:.3e} (tol {report.tolerance:g})")
    if not report.passed:
        raise click.ClickException("gradient check failed")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code or 1)
    except click.exceptions.Abort:
        sys.exit(130)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
