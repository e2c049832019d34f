#!/usr/bin/env python3
"""
Marco Oculomotor
================

Punto de entrada de línea de comandos. Cada subcomando encadena los
módulos del paquete en uno de los flujos de trabajo:

    preprocess        grabaciones crudas -> scanpaths canónicos
    ivt               etiquetas I-VT y características expertas de un scanpath
    pretrain          pre-entrenamiento con las cuatro tareas
    embed             almacén de embeddings a partir de un checkpoint
    eval-stimulus     predicción de estímulo c-way k-shot
    eval-participant  clasificación de participantes con validación cruzada
    synth             corpus sintético con verdad conocida
    plotdata          datos para gráficas de pérdidas y vectores diferencia

Códigos de salida: 0 éxito, 1 uso o configuración, 2 datos, 3 numérico.
"""

import argparse
import sys
from collections import defaultdict
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .core.downstream import (
    expert_baseline,
    extract_embeddings,
    lasso_cv,
    participant_matrix,
    run_supervised_task,
)
from .core.fixation import DEFAULT_MIN_FIX_MS, DEFAULT_VT_DEGPS, expert_features, ivt_labels
from .core.gaze import preprocess_many
from .core.network import ObfModel, count_encoder_parameters, pad_sequences
from .core.pretrainer import Pretrainer, cl_segment
from .core.protonet import run_metric_task
from .core.synthetic import generate_corpus, write_synthetic_corpus
from .data.models import EmbeddingStore, Scanpath, StimulusTaskSpec
from .data.repository import (
    build_participant_records,
    collect_labels,
    corpus_kind,
    find_datasets,
    load_corpus,
    load_scanpaths,
    read_manifest,
    read_scanpath_csv,
    write_scanpath_dataset,
)
from .data.storage import (
    load_checkpoint,
    load_embeddings,
    model_checksum,
    save_checkpoint,
    save_embeddings,
)
from .errors import GazeDataError, MarcoError, UsageError
from .utils.config import AppConfig, EvalMode, config_hash, load_config, update_config
from .utils.exporter import Exporter, staged_directory
from .utils.logger import add_log_file, get_logger, set_level, set_run_context

logger = get_logger(__name__)

SEGMENT_SEP = "#"
TASK_CHOICES = ObfModel.TASKS


@dataclass
class CommandResult:
    """Resultado de un subcomando."""
    exit_code: int = 0
    artifacts: list[Path] = field(default_factory=list)
    message: str = ""


class CliParser(argparse.ArgumentParser):
    """Parser cuyos errores de uso se convierten en ``UsageError`` (código 1)."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class Context:
    """Estado común a todos los subcomandos."""
    config: AppConfig
    seed: int
    threads: int

    @property
    def exporter(self) -> Exporter:
        return Exporter(seed=self.seed, config_hash=config_hash(self.config))


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Semilla global")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="Hilos de trabajo")
    common.add_argument("--config", default=argparse.SUPPRESS, help="Archivo de configuración")
    common.add_argument(
        "--log-level", default=argparse.SUPPRESS,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], help="Nivel de logging",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    """Construye el parser con todos los subcomandos."""
    common = _common_flags()
    parser = CliParser(
        prog="marco-oculomotor",
        description="Aprendizaje de representaciones de scanpaths oculares",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", parser_class=CliParser, required=True)

    p = sub.add_parser("preprocess", parents=[common], help="Canonicaliza un corpus crudo")
    p.add_argument("--in", dest="input", required=True, help="Corpus crudo")
    p.add_argument("--out", required=True, help="Directorio de salida")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("ivt", parents=[common], help="Etiquetas I-VT de un scanpath canónico")
    p.add_argument("--in", dest="input", required=True, help="CSV x_deg,y_deg")
    p.add_argument("--vt-degps", type=float, default=DEFAULT_VT_DEGPS)
    p.add_argument("--min-fix-ms", type=float, default=DEFAULT_MIN_FIX_MS)
    p.add_argument("--out", default=None, help="Prefijo de salida (por defecto, el de la entrada)")
    p.set_defaults(handler=cmd_ivt)

    p = sub.add_parser("pretrain", parents=[common], help="Pre-entrena el codificador")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="Ruta del checkpoint")
    p.add_argument("--log", default=None, help="CSV del registro (por defecto, junto al checkpoint)")
    p.add_argument("--disable-task", action="append", choices=TASK_CHOICES, default=[])
    p.add_argument("--exclude-source", action="append", default=[])
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("embed", parents=[common], help="Extrae embeddings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--segments", type=int, default=0, help="Segmentos por scanpath (0 = completo)")
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("eval-stimulus", parents=[common], help="Predicción de estímulo c-way k-shot")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ways", type=int, default=None)
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--mode", choices=[m.value for m in EvalMode], default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--fine-tune", action="store_true")
    p.add_argument("--out", default="stimulus_report.csv")
    p.set_defaults(handler=cmd_eval_stimulus)

    p = sub.add_parser("eval-participant", parents=[common], help="Clasificación de participantes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--expert-baseline", action="store_true")
    p.add_argument("--out", default="participant_report.csv")
    p.set_defaults(handler=cmd_eval_participant)

    p = sub.add_parser("synth", parents=[common], help="Genera un corpus sintético")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("plotdata", parents=[common], help="Datos para gráficas")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--log", default=None, help="Registro de entrenamiento")
    source.add_argument("--store", default=None, help="Almacén de embeddings")
    p.add_argument("--pairs", default=None, help="CSV de pares (por defecto, pares de segmentos)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_plotdata)
    return parser


def load_any_scanpaths(path: str | Path, threads: int = 1) -> tuple[list[Scanpath], dict[str, int]]:
    """Scanpaths de un corpus canónico o, si es crudo, preprocesados al vuelo."""
    if corpus_kind(path) == "scanpath":
        return load_scanpaths(path)
    recordings, _ = load_corpus(path, threads)
    scanpaths, _ = preprocess_many(recordings, threads)
    return scanpaths, collect_labels(path)


# ---------------------------------------------------------------------------
# Subcomandos
# ---------------------------------------------------------------------------

def cmd_preprocess(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Canonicaliza un corpus crudo y escribe el informe de descartes."""
    datasets = find_datasets(args.input)
    geometries = {}
    for directory in datasets:
        manifest = read_manifest(directory)
        geometries[manifest.source_tag] = manifest.geometry
    recordings, load_report = load_corpus(args.input, ctx.threads)
    scanpaths, discarded = preprocess_many(recordings, ctx.threads)
    labels = collect_labels(args.input)

    by_source: dict[str, list[Scanpath]] = defaultdict(list)
    for sp in scanpaths:
        by_source[sp.source_tag].append(sp)
    exporter = ctx.exporter
    out = Path(args.out)
    with staged_directory(out) as staging:
        for tag, group in sorted(by_source.items()):
            directory = staging if len(datasets) == 1 else staging / tag
            write_scanpath_dataset(group, directory, geometries[tag], labels)
        exporter.export_discards(discarded, staging / "discarded.csv")
        exporter.export_summary("Preprocesado", [
            ("grabaciones", len(recordings)),
            ("scanpaths", len(scanpaths)),
            ("descartadas", len(discarded)),
            ("filas leídas", load_report.total_rows),
            ("filas rechazadas", load_report.rejected_rows),
            ("archivos omitidos", len(load_report.skipped_files)),
        ], staging / "preprocess_summary.txt")
    return CommandResult(artifacts=[out], message=f"{len(scanpaths)} scanpaths, {len(discarded)} descartadas")


def cmd_ivt(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Etiquetas I-VT y resumen de características expertas."""
    sp = read_scanpath_csv(args.input)
    if len(sp) < 2:
        raise GazeDataError(f"{args.input}: se necesitan al menos 2 muestras")
    labels = ivt_labels(sp, args.vt_degps, args.min_fix_ms)
    features = expert_features(sp, labels)
    prefix = Path(args.out) if args.out else Path(args.input).with_suffix("")
    exporter = ctx.exporter
    written = [
        exporter.export_labels(labels, prefix.with_name(prefix.name + ".labels.csv")),
        exporter.export_expert_summary(features, prefix.with_name(prefix.name + ".features.txt")),
    ]
    return CommandResult(artifacts=written, message=f"{int(labels.sum())}/{labels.size} muestras de fijación")


def cmd_pretrain(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Pre-entrena y guarda checkpoint y registro por época."""
    updates: dict[str, object] = {}
    for task in args.disable_task:
        updates[f"pretrain.w_{task}"] = 0.0
    if args.exclude_source:
        updates["pretrain.exclude_sources"] = tuple(ctx.config.pretrain.exclude_sources) + tuple(args.exclude_source)
    if args.epochs is not None:
        updates["pretrain.epochs"] = args.epochs
    if updates:
        update_config(**updates)
    if not ctx.config.pretrain.active_tasks:
        raise UsageError("Todas las tareas están deshabilitadas")

    scanpaths, _ = load_any_scanpaths(args.corpus, ctx.threads)
    trainer = Pretrainer(ctx.config.model, ctx.config.pretrain, ctx.config.augment)
    model, history = trainer.train(scanpaths)
    logger.info(f"Codificador con {count_encoder_parameters(model)} parámetros")

    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.stem + ".log.csv")
    exporter = ctx.exporter
    # Checkpoint primero, registro después
    checkpoint = save_checkpoint(model, ctx.config, out)
    written = [checkpoint, exporter.export_training_log(history, log_path)]
    return CommandResult(artifacts=written, message=f"{len(history)} épocas")


def cmd_embed(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Almacén de embeddings de scanpaths completos o de segmentos."""
    model, ckpt_config = load_checkpoint(args.ckpt)
    scanpaths, _ = load_any_scanpaths(args.input, ctx.threads)
    store = EmbeddingStore(dim=model.embedding_dim, model_checksum=model_checksum(model))

    if args.segments < 0:
        raise UsageError("--segments no puede ser negativo")
    if args.segments == 0:
        vectors = extract_embeddings(model, scanpaths, ctx.threads)
        for sp, vector in zip(scanpaths, vectors, strict=True):
            if vector is not None:
                store.append(sp.participant_id, sp.stimulus_id, vector)
    else:
        model.eval()
        skipped = 0
        for index, sp in enumerate(scanpaths):
            rng = np.random.default_rng([ctx.seed, index])
            segments = [cl_segment(sp, ckpt_config.pretrain, rng)[0] for _ in range(args.segments)]
            try:
                with torch.no_grad():
                    x, lengths = pad_sequences(segments, model.dtype)
                    vectors = model.encode(x, lengths)[0].double().numpy()
            except GazeDataError as e:
                skipped += 1
                logger.warning(f"Segmentos omitidos de {sp.participant_id}/{sp.stimulus_id}: {e}")
                continue
            for j, vector in enumerate(vectors):
                store.append(sp.participant_id, f"{sp.stimulus_id}{SEGMENT_SEP}{j}", vector)
        if skipped:
            logger.warning(f"{skipped} de {len(scanpaths)} scanpaths sin segmentos válidos")
    written = save_embeddings(store, args.out)
    return CommandResult(artifacts=[written], message=f"{len(store)} embeddings")


def cmd_eval_stimulus(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Predicción de estímulo en modo supervisado o métrico."""
    cfg = ctx.config.eval
    model, _ = load_checkpoint(args.ckpt)
    scanpaths, _ = load_any_scanpaths(args.corpus, ctx.threads)
    mode = args.mode or cfg.mode.value
    spec = StimulusTaskSpec(
        c_ways=args.ways or cfg.c_ways,
        k_shots=args.shots or cfg.k_shots,
        mode=mode,
        episodes=args.episodes or cfg.episodes,
        queries=cfg.queries,
    )
    fine_tune = args.fine_tune or cfg.fine_tune
    runner = run_metric_task if mode == EvalMode.METRIC.value else run_supervised_task
    report = runner(model, scanpaths, spec, cfg, ctx.seed, fine_tune)

    out = Path(args.out)
    exporter = ctx.exporter
    written = [
        exporter.export_stimulus_report(report, out),
        exporter.export_summary("Predicción de estímulo", [
            ("modo", report.mode),
            ("c_ways", report.c_ways),
            ("k_shots", report.k_shots),
            ("exactitud", f"{report.accuracy:.4f}"),
            ("episodios", report.episodes),
            ("ajuste fino", fine_tune),
        ], out.with_suffix(".txt")),
    ]
    return CommandResult(artifacts=written, message=f"exactitud {report.accuracy:.4f}")


def cmd_eval_participant(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Clasificación de participantes y, opcionalmente, la línea base experta."""
    cfg = ctx.config.eval
    model, _ = load_checkpoint(args.ckpt)
    scanpaths, labels = load_any_scanpaths(args.corpus, ctx.threads)
    if not labels:
        raise UsageError("El corpus no declara etiquetas de participante (label.<id> = 0|1)")
    records, roster = build_participant_records(scanpaths, labels)
    vectors, y = participant_matrix(model, records, roster)
    report = lasso_cv(vectors, y, cfg.folds, cfg.inner_folds, cfg.lasso_cs, ctx.seed)

    out = Path(args.out)
    exporter = ctx.exporter
    written = [exporter.export_eval_report(report, out)]
    items: list[tuple[str, object]] = [
        ("participantes", len(records)),
        ("estímulos", len(roster)),
        ("exactitud", f"{report.accuracy:.4f}"),
        ("auc", report.auc),
        ("f1", f"{report.f1:.4f}"),
    ]
    if args.expert_baseline:
        baseline = expert_baseline(
            records, roster, cfg, ctx.seed, ctx.config.pretrain.vt_degps, ctx.config.pretrain.min_fix_ms
        )
        written.append(exporter.export_eval_report(baseline, out.with_name(out.stem + ".expert.csv")))
        items += [("exactitud experta", f"{baseline.accuracy:.4f}"), ("auc experta", baseline.auc)]
    written.append(exporter.export_summary("Clasificación de participantes", items, out.with_suffix(".txt")))
    return CommandResult(artifacts=written, message=f"exactitud {report.accuracy:.4f}")


def cmd_synth(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Genera y escribe un corpus sintético con etiquetas exactas."""
    corpus = generate_corpus(ctx.config.synth)
    out = Path(args.out)
    with staged_directory(out) as staging:
        write_synthetic_corpus(corpus, staging)
    return CommandResult(artifacts=[out], message=f"{len(corpus.items)} scanpaths")


def _segment_base(stimulus_id: str) -> str:
    return stimulus_id.split(SEGMENT_SEP, 1)[0]


def segment_pairs(store: EmbeddingStore, rng: np.random.Generator) -> pd.DataFrame:
    """
    Pares de registros del almacén: segmentos consecutivos del mismo
    scanpath y el mismo número de pares de scanpaths distintos.
    """
    groups: dict[tuple[str, str], list[str]] = defaultdict(list)
    for rec in store.records:
        groups[(rec.participant_id, _segment_base(rec.stimulus_id))].append(rec.stimulus_id)
    keys = sorted(groups)
    rows = []
    for pid, base in keys:
        members = groups[(pid, base)]
        rows += [(pid, a, pid, b) for a, b in zip(members[:-1], members[1:], strict=True)]
    n_same = len(rows)
    if len(keys) >= 2:
        for _ in range(max(n_same, 1)):
            i, j = rng.choice(len(keys), size=2, replace=False)
            a, b = keys[int(i)], keys[int(j)]
            rows.append((a[0], groups[a][0], b[0], groups[b][0]))
    return pd.DataFrame(rows, columns=["participant_a", "stimulus_a", "participant_b", "stimulus_b"])


def cmd_plotdata(args: argparse.Namespace, ctx: Context) -> CommandResult:
    """Curvas de pérdida o vectores diferencia, listos para graficar."""
    exporter = ctx.exporter
    if args.log:
        frame = pd.read_csv(args.log, comment="#")
        missing = [c for c in ("epoch", "loss_rc", "loss_pc", "loss_fi", "loss_cl") if c not in frame.columns]
        if missing:
            raise GazeDataError(f"{args.log}: faltan columnas {missing}")
        curves = frame[[c for c in frame.columns if c != "lr"]]
        written = exporter.export_loss_curves(curves, args.out)
        return CommandResult(artifacts=[written], message=f"{len(curves)} épocas")

    store = load_embeddings(args.store)
    if args.pairs:
        pairs = pd.read_csv(args.pairs, comment="#", dtype=str)
    else:
        pairs = segment_pairs(store, np.random.default_rng(ctx.seed))
    lookup = store.lookup()
    diffs, same, names = [], [], []
    for row in pairs.itertuples(index=False):
        a = (row.participant_a, row.stimulus_a)
        b = (row.participant_b, row.stimulus_b)
        if a not in lookup or b not in lookup:
            raise GazeDataError(f"Par con registros ausentes en el almacén: {a} / {b}")
        diffs.append(np.abs(lookup[a].astype(np.float64) - lookup[b].astype(np.float64)))
        same.append(int(a[0] == b[0] and _segment_base(a[1]) == _segment_base(b[1])))
        names.append(f"{a[0]}/{a[1]}|{b[0]}/{b[1]}")
    vectors = np.stack(diffs) if diffs else np.zeros((0, store.dim))
    written = exporter.export_difference_vectors(vectors, np.array(same), names, args.out)
    return CommandResult(artifacts=[written], message=f"{len(same)} pares")


# ---------------------------------------------------------------------------
# Ejecución
# ---------------------------------------------------------------------------

def make_context(args: argparse.Namespace) -> Context:
    """Carga la configuración y aplica los indicadores globales."""
    config = load_config(getattr(args, "config", None))
    if config.logging.log_file:
        add_log_file(config.logging.log_file)
    set_level(getattr(args, "log_level", None) or config.logging.level)

    seed = getattr(args, "seed", None)
    if seed is None:
        seed = config.pretrain.seed
    else:
        update_config(**{"pretrain.seed": seed, "synth.seed": seed, "eval.seed": seed})
    threads = getattr(args, "threads", 1)
    if threads < 1:
        raise UsageError("--threads debe ser al menos 1")
    torch.set_num_threads(threads)
    set_run_context(args.command, seed)
    return Context(config=config, seed=seed, threads=threads)


def run(argv: Sequence[str] | None = None) -> CommandResult:
    """Ejecuta la línea de comandos y devuelve el resultado sin salir del proceso."""
    try:
        args = build_parser().parse_args(argv)
        ctx = make_context(args)
        handler: Callable[[argparse.Namespace, Context], CommandResult] = args.handler
        result = handler(args, ctx)
    except MarcoError as e:
        print(f"error: {e}", file=sys.stderr)
        return CommandResult(exit_code=e.exit_code, message=str(e))
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return CommandResult(exit_code=GazeDataError.exit_code, message=str(e))
    for path in result.artifacts:
        logger.info(f"Artefacto: {path}")
    if result.message:
        logger.info(result.message)
    return result


def main(argv: Sequence[str] | None = None) -> int:
    """Punto de entrada del script ``marco-oculomotor``."""
    return run(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
