"""Operator entry points: serve, replay, eval, train-stacker.

Exit codes: 0 success, 1 runtime failure, 2 usage/config errors.
"""

from __future__ import annotations

import asyncio
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics as metrics_mod
from .config import ENV_CONFIG, ENV_LISTEN, ConfigError, load_config
from .replay import ReplayError, ScriptError, load_script, parse_transcript, run_replay
from .stacking import TrainConfig, load_model, save_model, train_stacker, predict


def _fmt(value: float | None, percent: bool) -> str:
    if value is None:
        return "-"
    return f"{value * 100:.2f}" if percent else f"{value:.4f}"


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Real-time mediation engine for bilingual two-party dialogue."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@click.option("--config", "config_path", envvar=ENV_CONFIG, required=True,
              type=click.Path(path_type=Path), help="Service config file (JSON).")
@click.option("--listen", envvar=ENV_LISTEN, default=None,
              help="Override the listen address (host:port).")
def serve(config_path: Path, listen: str | None) -> None:
    """Run the engine and middleware until SIGINT/SIGTERM."""
    from .server import run_service

    try:
        config = load_config(config_path, listen_override=listen)
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    try:
        asyncio.run(run_service(config))
    except OSError as exc:
        # Port in use, permission denied, and friends are operator errors.
        raise click.UsageError(f"cannot listen on {config.listen_host}:{config.listen_port}: {exc}")


@main.command()
@click.option("--script", "script_path", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", envvar=ENV_CONFIG, required=True,
              type=click.Path(path_type=Path))
@click.option("--transcript", "transcript_path", type=click.Path(path_type=Path),
              default=None, help="Write the transcript TSV here.")
@click.option("--json", "as_json", is_flag=True, help="Emit stats as JSON.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed recorded in stats output; stub determinism is config-driven.")
def replay(script_path: Path, config_path: Path, transcript_path: Path | None,
           as_json: bool, seed: int) -> None:
    """Replay a scripted dialogue headlessly and report choice/latency stats."""
    try:
        config = load_config(config_path)
        script = load_script(script_path)
    except (ConfigError, ScriptError, OSError) as exc:
        raise click.UsageError(str(exc))
    try:
        result = run_replay(script, config)
    except ReplayError as exc:
        raise click.ClickException(str(exc))

    if transcript_path is not None:
        transcript_path.write_text(result.transcript, encoding="utf-8")
    else:
        click.echo(result.transcript, nl=False)

    payload = {
        "seed": seed,
        "turns": len(result.turns),
        "choice_stats": result.stats.as_dict(),
        "latency_means_s": {p.value: m for p, m in result.latency_means.items()},
    }
    if as_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        stats = result.stats
        click.echo(f"turns: {len(result.turns)}")
        click.echo(
            "violations: "
            f"low={stats.low_impact_count} high={stats.high_impact_count} "
            f"remediation_chosen={stats.remediation_chosen_count} "
            f"ratio={_fmt(stats.ratio, percent=False)}"
        )
        for path, mean in sorted(result.latency_means.items(), key=lambda kv: kv[0].value):
            click.echo(f"latency[{path.value}]: {mean:.3f}s")


def _read_label_file(path: Path) -> list[str]:
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def _read_predictions(path: Path) -> tuple[list[int], list[int]]:
    preds: list[int] = []
    golds: list[int] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise click.ClickException(
                f"{path}:{lineno}: expected id<TAB>pred<TAB>gold, got {len(parts)} fields"
            )
        try:
            preds.append(int(parts[1]))
            golds.append(int(parts[2]))
        except ValueError:
            raise click.ClickException(f"{path}:{lineno}: pred and gold must be integers")
    return preds, golds


@main.command(name="eval")
@click.option("--predictions", type=click.Path(path_type=Path, exists=True), default=None,
              help="id<TAB>pred<TAB>gold file for micro P/R/F1.")
@click.option("--k", type=int, default=None, help="Class count for --predictions.")
@click.option("--candidates", type=click.Path(path_type=Path, exists=True), default=None,
              help="Generated texts, one per line (BLEU and ROUGE-L vs --references).")
@click.option("--references", type=click.Path(path_type=Path, exists=True), default=None)
@click.option("--kappa-a", type=click.Path(path_type=Path, exists=True), default=None,
              help="First rater's labels, one per line.")
@click.option("--kappa-b", type=click.Path(path_type=Path, exists=True), default=None)
@click.option("--transcript", type=click.Path(path_type=Path, exists=True), default=None,
              help="Engine transcript TSV for choice stats.")
@click.option("--smooth", is_flag=True, help="Apply add-1 smoothing to BLEU n>1 orders.")
@click.option("--json", "as_json", is_flag=True)
@click.option("--percent", is_flag=True, help="Format metric values as 0-100 with 2 decimals.")
def eval_cmd(predictions: Path | None, k: int | None, candidates: Path | None,
             references: Path | None, kappa_a: Path | None, kappa_b: Path | None,
             transcript: Path | None, smooth: bool, as_json: bool, percent: bool) -> None:
    """Compute metrics from prediction, text, and transcript files."""
    report: dict = {}
    rows: list[tuple[str, float | None]] = []

    if predictions is not None:
        preds, golds = _read_predictions(predictions)
        if k is None:
            k = max(preds + golds) + 1 if preds else 0
        try:
            prf = metrics_mod.micro_prf(preds, golds, k)
        except ValueError as exc:
            raise click.ClickException(str(exc))
        report["classification"] = prf.as_dict()
        rows += [("P", prf.precision), ("R", prf.recall), ("F1-Micro", prf.f1_micro)]

    if (candidates is None) != (references is None):
        raise click.UsageError("--candidates and --references must be given together")
    if candidates is not None and references is not None:
        cand_lines = _read_label_file(candidates)
        ref_lines = _read_label_file(references)
        if len(cand_lines) != len(ref_lines):
            raise click.ClickException(
                f"candidate/reference line counts differ: {len(cand_lines)} vs {len(ref_lines)}"
            )
        cand_tokens = [metrics_mod.tokenize(c) for c in cand_lines]
        ref_tokens = [metrics_mod.tokenize(r) for r in ref_lines]
        try:
            bleu_score = metrics_mod.bleu(cand_tokens, ref_tokens, smooth_add1=smooth)
        except ValueError as exc:
            raise click.ClickException(str(exc))
        rouge_scores = [
            metrics_mod.rouge_l_f1(c, r) for c, r in zip(cand_tokens, ref_tokens) if r
        ]
        rouge_mean = sum(rouge_scores) / len(rouge_scores) if rouge_scores else 0.0
        report["generation"] = {"bleu": bleu_score, "rouge_l_f1": rouge_mean}
        rows += [("BLEU", bleu_score), ("ROUGE-L", rouge_mean)]

    if (kappa_a is None) != (kappa_b is None):
        raise click.UsageError("--kappa-a and --kappa-b must be given together")
    if kappa_a is not None and kappa_b is not None:
        try:
            kappa = metrics_mod.cohens_kappa(_read_label_file(kappa_a), _read_label_file(kappa_b))
        except ValueError as exc:
            raise click.ClickException(str(exc))
        report["agreement"] = {"kappa": kappa}
        rows.append(("kappa", kappa))

    if transcript is not None:
        try:
            parsed = parse_transcript(transcript.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise click.ClickException(str(exc))
        stats = metrics_mod.choice_stats(parsed)
        report["choices"] = stats.as_dict()
        rows.append(("remediation-choice ratio", stats.ratio))

    if not report:
        raise click.UsageError("nothing to evaluate; pass at least one input file")

    if as_json:
        click.echo(json.dumps(report, indent=2, sort_keys=True))
    else:
        width = max(len(name) for name, _ in rows)
        for name, value in rows:
            click.echo(f"{name:<{width}}  {_fmt(value, percent)}")


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError:
            raise click.ClickException(f"{path}:{lineno}: not a row of floats")
    return np.asarray(rows, dtype=float)


@main.command(name="train-stacker")
@click.option("--features", "features_path", required=True,
              type=click.Path(path_type=Path, exists=True),
              help="One stacked feature vector (2K floats) per line.")
@click.option("--labels", "labels_path", required=True,
              type=click.Path(path_type=Path, exists=True),
              help="One class index per line, aligned with --features.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--holdout", type=float, default=0.0, show_default=True,
              help="Fraction of the data held out for an F1 report.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--l2", type=float, default=1e-3, show_default=True)
@click.option("--epochs", type=int, default=500, show_default=True)
def train_stacker_cmd(features_path: Path, labels_path: Path, out_path: Path,
                      holdout: float, seed: int, lr: float, l2: float, epochs: int) -> None:
    """Train the stacking combiner and persist it as a flat text model."""
    features = _read_matrix(features_path)
    labels_rows = _read_matrix(labels_path)
    labels = labels_rows.reshape(-1).astype(int)
    if features.ndim != 2 or len(labels) != len(features):
        raise click.UsageError("features and labels must align")
    if not 0.0 <= holdout < 1.0:
        raise click.UsageError("--holdout must lie in [0, 1)")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(features))
    n_hold = int(len(features) * holdout)
    hold_idx, train_idx = order[:n_hold], order[n_hold:]
    config = TrainConfig(learning_rate=lr, l2=l2, epochs=epochs, seed=seed)
    try:
        model = train_stacker(features[train_idx], labels[train_idx], config)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    save_model(model, out_path)
    click.echo(f"model written to {out_path} (K={model.k}"
               f"{', degenerate' if model.degenerate else ''})")
    if n_hold:
        preds = [predict(model, f)[0] for f in features[hold_idx]]
        prf = metrics_mod.micro_prf(preds, list(labels[hold_idx]), model.k)
        click.echo(f"held-out F1-Micro: {prf.f1_micro:.4f} over {n_hold} examples")


if __name__ == "__main__":
    main()
