from html import escape
from pathlib import Path
from typing import Dict, List, Sequence, Union
import logging

import numpy as np

from models import AttentionRecord, EncodedDoc, ReviewDoc, ViewWeights
from services.network import HuapaNetwork, predict
from utils.errors import ConfigError
from utils.jsonl import RecordWriter

# user view above product view
VIEW_ORDER = ("user", "product", "text")
VIEW_COLORS = {"user": "220, 50, 47", "product": "38, 139, 210", "text": "88, 110, 117"}


def display_scale(weights: Sequence[float]) -> List[float]:
    """Min-max scale to [0, 1] for shading; constant rows (a single word included) shade at 1."""
    values = np.asarray(weights, dtype=np.float64)
    if values.size == 0:
        return []
    low, high = values.min(), values.max()
    if high - low <= 0:
        return [1.0] * values.size
    return ((values - low) / (high - low)).tolist()


class AttentionExportService:
    def __init__(self, network: HuapaNetwork):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.network = network

    def build_record(self, index: int, doc: ReviewDoc, encoded: EncodedDoc) -> AttentionRecord:
        """
        Attention weights of one document as produced by the forward pass.

        Tokens are those that survived truncation; gold and predicted are
        ratings on the 1-based scale.
        """
        out = self.network.forward(encoded)
        lengths = encoded.sentence_lengths
        sentences = [sentence[:n] for sentence, n in zip(doc.sentences, lengths)]
        views: Dict[str, ViewWeights] = {}
        for name, trace in out.trace.views.items():
            views[name] = ViewWeights(
                words=[trace.word_weights[i][:n].tolist() for i, n in enumerate(lengths)],
                sentences=trace.sentence_weights[: len(lengths)].tolist(),
            )
        return AttentionRecord(
            index=index,
            user=doc.user,
            product=doc.product,
            gold=encoded.label + 1,
            predicted=predict(out) + 1,
            sentences=sentences,
            views=views,
        )

    def render_html(self, record: AttentionRecord) -> str:
        parts = [
            "<!DOCTYPE html>",
            "<html><head><meta charset=\"utf-8\">",
            f"<title>Attention for document {record.index}</title>",
            "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto}"
            ".view{margin-bottom:2em}.sent{margin:.3em 0}.beta{display:inline-block;width:1.2em;"
            "height:1em;margin-right:.6em;vertical-align:middle;border:1px solid #ccc}"
            "span.w{padding:0 .15em;border-radius:2px}</style>",
            "</head><body>",
            f"<h1>Document {record.index}</h1>",
            f"<p>user <b>{escape(record.user)}</b>, product <b>{escape(record.product)}</b>, "
            f"gold {record.gold}, predicted {record.predicted}</p>",
        ]
        for name in sorted(record.views, key=lambda v: VIEW_ORDER.index(v) if v in VIEW_ORDER else len(VIEW_ORDER)):
            weights = record.views[name]
            color = VIEW_COLORS.get(name, VIEW_COLORS["text"])
            parts.append(f"<div class=\"view\"><h2>{escape(name)} attention</h2>")
            for tokens, alpha, beta in zip(record.sentences, weights.words, display_scale(weights.sentences)):
                parts.append(
                    f"<div class=\"sent\"><span class=\"beta\" style=\"background:rgba({color},{beta:.3f})\"></span>"
                )
                for token, raw, shade in zip(tokens, alpha, display_scale(alpha)):
                    parts.append(
                        f"<span class=\"w\" title=\"{raw:.4f}\" style=\"background:rgba({color},{shade:.3f})\">"
                        f"{escape(token)}</span>"
                    )
                parts.append("</div>")
            parts.append("</div>")
        parts.append("</body></html>")
        return "\n".join(parts)

    def export(
        self,
        docs: Sequence[ReviewDoc],
        encoded: Sequence[EncodedDoc],
        indices: Sequence[int],
        out_dir: Union[str, Path],
    ) -> List[Path]:
        """
        Write one JSON-lines record file and one HTML page per selected document.

        Args:
            docs (Sequence[ReviewDoc]): Parsed corpus
            encoded (Sequence[EncodedDoc]): The same corpus encoded with the checkpoint's vocabulary
            indices (Sequence[int]): 0-based document positions
            out_dir (Union[str, Path]): Output directory

        Returns:
            List[Path]: Written files, records first
        """
        for index in indices:
            if not 0 <= index < len(docs):
                raise ConfigError(f"document index {index} out of range for corpus of {len(docs)} documents")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        records_path = out_dir / "attention.jsonl"
        written = [records_path]
        with RecordWriter(records_path) as writer:
            for index in indices:
                record = self.build_record(index, docs[index], encoded[index])
                writer.write(record)
                page = out_dir / f"attention_{index}.html"
                page.write_text(self.render_html(record), encoding="utf-8")
                written.append(page)
        self.logger.info(f"Exported attention for {len(indices)} documents to {out_dir}")
        return written
