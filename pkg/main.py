import functools
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import click
from dotenv import find_dotenv, load_dotenv

load_dotenv(find_dotenv())
from dependencies.settings import get_run_config, require_paths  # noqa: E402
from models import ErrorRecord, RunConfig, SummaryRecord  # noqa: E402
from services.attention import AttentionExportService  # noqa: E402
from services.corpus import CorpusService, split_corpus  # noqa: E402
from services.embedding import EmbeddingService  # noqa: E402
from services.network import HuapaNetwork  # noqa: E402
from services.synthetic import gen_synthetic  # noqa: E402
from services.trainer import TrainerService, evaluate  # noqa: E402
from services.vocabulary import Vocabulary, build_vocab, encode  # noqa: E402
from utils.errors import ConfigError, HuapaError  # noqa: E402
from utils.jsonl import RecordWriter, emit  # noqa: E402

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger("huapa")


def fail(error: HuapaError) -> None:
    emit(ErrorRecord(kind=error.kind, exit_code=error.exit_code, message=error.message))
    sys.exit(error.exit_code)


def handle_errors(command: str):
    """Turn service errors into one error record on stdout and the matching exit code."""
    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except HuapaError as e:
                logger.error(f"{command} failed: {e.message}")
                fail(e)
            except (click.ClickException, click.exceptions.Exit, click.Abort):
                raise
            except Exception as e:
                logger.exception(f"{command} failed")
                fail(HuapaError(f"{command} failed: {str(e)}"))
        return wrapper
    return decorator


def corpus_service(config: RunConfig, classes: Optional[int] = None) -> CorpusService:
    return CorpusService(
        classes=classes or config.train.dims.classes,
        field_separator=config.field_separator,
        sentence_delimiter=config.sentence_delimiter,
        lowercase=config.lowercase,
    )


config_option = click.option(
    "--config", "config_path", type=click.Path(path_type=Path), default=None, help="YAML run configuration."
)
override_option = click.option(
    "-o", "--override", "overrides", multiple=True, metavar="KEY=VALUE",
    help="Override a config value, e.g. -o train.lr=0.01 (repeatable).",
)


@click.group()
@click.option("--log-level", default=lambda: os.getenv("HUAPA_LOG_LEVEL", "INFO"), show_default="INFO")
def cli(log_level: str):
    """Train and inspect hierarchical user/product attention sentiment models."""
    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)


@cli.command("train")
@config_option
@override_option
@handle_errors("train")
def cmd_train(config_path: Optional[Path], overrides: Sequence[str]):
    """Build the vocabulary, train, and write checkpoint, epoch log and test metrics."""
    config = get_run_config(config_path, overrides)
    require_paths(config, "train_path", "dev_path")
    if config.test_path is not None:
        require_paths(config, "test_path")
    if config.embeddings_path is not None:
        require_paths(config, "embeddings_path")

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = corpus_service(config)
    dims = config.train.dims

    vocab = build_vocab(corpus.iter_corpus(config.train_path), config.min_frequency)
    vocab.save(out_dir / "vocab.txt")
    splits = {"train": config.train_path, "dev": config.dev_path}
    if config.test_path is not None:
        splits["test"] = config.test_path
    encoded, encode_stats = {}, {}
    for name, path in splits.items():
        encoded[name], stats = encode(corpus.iter_corpus(path), vocab, config.max_sentences, config.max_words)
        encode_stats[name] = {**stats.model_dump(), "unk_rate": stats.unk_rate}
        logger.info(
            f"{name}: {stats.documents} documents, {stats.truncated_documents} truncated documents, "
            f"{stats.truncated_sentences} truncated sentences, UNK rate {stats.unk_rate:.4f}"
        )

    table, random_rows = EmbeddingService(dims.word, config.train.init_range, config.train.seed).load_embeddings(
        config.embeddings_path, vocab
    )
    network = HuapaNetwork.create(
        config.variant, dims, vocab, word_embeddings=table,
        seed=config.train.seed, init_range=config.train.init_range,
    )
    trainer = TrainerService(config.train)
    result = trainer.train(network, encoded["train"], encoded["dev"], log_path=out_dir / "epochs.jsonl")
    network.save(out_dir / "model.ckpt", vocab, config.max_sentences, config.max_words)

    with RecordWriter(out_dir / "metrics.jsonl") as writer:
        for name in ("dev", "test"):
            if name in encoded:
                metrics = trainer.evaluate(network, encoded[name], split=name)
                writer.write(metrics)
                emit(metrics)

    emit(SummaryRecord(command="train", details={
        "variant": config.variant.value,
        "output_dir": str(out_dir),
        "epochs": len(result.epochs),
        "best_epoch": result.best_epoch,
        "best_dev_acc": result.best_dev_acc,
        "trainable_parameters": network.params.parameter_count(include_frozen=False),
        "random_embedding_rows": random_rows,
        "encoding": encode_stats,
    }))


def _load_for_inference(checkpoint: Path, vocab_path: Optional[Path]):
    vocab = Vocabulary.load(vocab_path or checkpoint.parent / "vocab.txt")
    network, header = HuapaNetwork.load(checkpoint, vocab)
    return vocab, network, header


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(path_type=Path), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(path_type=Path), default=None,
              help="Vocabulary file (default: vocab.txt next to the checkpoint).")
@config_option
@override_option
@handle_errors("eval")
def cmd_eval(checkpoint: Path, corpus_path: Path, vocab_path: Optional[Path],
             config_path: Optional[Path], overrides: Sequence[str]):
    """Evaluate a checkpoint on a corpus: accuracy and RMSE."""
    config = get_run_config(config_path, overrides)
    if not corpus_path.exists():
        raise ConfigError(f"corpus: path not found: {corpus_path}")
    vocab, network, header = _load_for_inference(checkpoint, vocab_path)
    corpus = corpus_service(config, classes=header.dims.classes)
    docs, _ = encode(corpus.iter_corpus(corpus_path), vocab, header.max_sentences, header.max_words)
    result = evaluate(network, docs, split=corpus_path.name, n_jobs=config.train.eval_jobs)
    emit(result)
    click.echo(f"accuracy {result.accuracy:.3f}  rmse {result.rmse:.3f}", err=True)


@cli.command("attn-export")
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(path_type=Path), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(path_type=Path), default=None)
@click.option("-i", "--index", "indices", type=int, multiple=True, required=True, help="0-based document index.")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("attention"))
@config_option
@override_option
@handle_errors("attn-export")
def cmd_attn_export(checkpoint: Path, corpus_path: Path, vocab_path: Optional[Path], indices: Sequence[int],
                    out_dir: Path, config_path: Optional[Path], overrides: Sequence[str]):
    """Export word and sentence attention of selected documents as records and HTML pages."""
    config = get_run_config(config_path, overrides)
    if not corpus_path.exists():
        raise ConfigError(f"corpus: path not found: {corpus_path}")
    vocab, network, header = _load_for_inference(checkpoint, vocab_path)
    docs = corpus_service(config, classes=header.dims.classes).parse_corpus(corpus_path)
    encoded, _ = encode(docs, vocab, header.max_sentences, header.max_words)
    written = AttentionExportService(network).export(docs, encoded, list(indices), out_dir)
    emit(SummaryRecord(command="attn-export", details={"files": [str(p) for p in written]}))


@cli.command("stats")
@click.argument("corpora", nargs=-1, required=True, type=click.Path(path_type=Path))
@config_option
@override_option
@handle_errors("stats")
def cmd_stats(corpora: Sequence[Path], config_path: Optional[Path], overrides: Sequence[str]):
    """Print document, user, product and length statistics per corpus file."""
    config = get_run_config(config_path, overrides)
    corpus = corpus_service(config)
    for path in corpora:
        emit(corpus.corpus_stats(corpus.parse_corpus(path), str(path)))


@cli.command("split")
@click.argument("corpus_path", type=click.Path(path_type=Path))
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=1, show_default=True)
@config_option
@override_option
@handle_errors("split")
def cmd_split(corpus_path: Path, out_dir: Path, seed: int, config_path: Optional[Path], overrides: Sequence[str]):
    """Split one corpus 80/10/10 into train/dev/test files."""
    config = get_run_config(config_path, overrides)
    corpus = corpus_service(config)
    parts = split_corpus(corpus.parse_corpus(corpus_path), seed)
    counts = {
        name: corpus.write_corpus(docs, out_dir / f"{name}.txt")
        for name, docs in zip(("train", "dev", "test"), parts)
    }
    emit(SummaryRecord(command="split", details=counts))


@cli.command("synth")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--users", type=int, default=12, show_default=True)
@click.option("--products", type=int, default=12, show_default=True)
@click.option("--docs", "n_docs", type=int, default=500, show_default=True)
@click.option("--classes", type=int, default=5, show_default=True)
@click.option("--unbiased", is_flag=True, help="Give every user and product a zero shift.")
@config_option
@override_option
@handle_errors("synth")
def cmd_synth(out_dir: Path, seed: int, users: int, products: int, n_docs: int, classes: int, unbiased: bool,
              config_path: Optional[Path], overrides: Sequence[str]):
    """Write a synthetic corpus whose ratings are shifted by user bias and product quality."""
    config = get_run_config(config_path, overrides)
    synthetic = gen_synthetic(seed, users, products, n_docs, classes, biased=not unbiased)
    corpus = corpus_service(config, classes=classes)
    counts = {
        name: corpus.write_corpus(docs, out_dir / f"{name}.txt")
        for name, docs in (("train", synthetic.train), ("dev", synthetic.dev), ("test", synthetic.test))
    }
    emit(SummaryRecord(command="synth", details=counts))


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="huapa", standalone_mode=False)
    except click.ClickException as e:
        emit(ErrorRecord(kind="usage", exit_code=1, message=e.format_message()))
        return 1
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        return 1
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
