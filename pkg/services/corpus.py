from pathlib import Path
from typing import Iterable, Iterator, List, Sequence, Tuple, Union
import logging

import numpy as np

from models import CorpusStatsRecord, ReviewDoc
from utils.errors import DataError

PathLike = Union[str, Path]


class CorpusService:
    def __init__(
        self,
        classes: int,
        field_separator: str = "\t\t",
        sentence_delimiter: str = "<sssss>",
        lowercase: bool = True,
    ):
        """
        Reader/writer for review corpora in the four-field TSV format.

        Args:
            classes (int): Number of rating levels C; file ratings are 1..C.
            field_separator (str): Separator between user, product, rating and text.
            sentence_delimiter (str): Token separating sentences inside the text.
            lowercase (bool): Lowercase the text before tokenization.
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.classes = classes
        self.field_separator = field_separator
        self.sentence_delimiter = sentence_delimiter
        self.lowercase = lowercase

    def parse_line(self, line: str, line_no: int, source: str = "<input>") -> ReviewDoc:
        fields = line.split(self.field_separator)
        if len(fields) != 4:
            raise DataError(
                f"{source}:{line_no}: expected 4 fields separated by {self.field_separator!r}, found {len(fields)}"
            )
        user, product, rating, text = fields

        try:
            label = int(rating.strip()) - 1
        except ValueError:
            raise DataError(f"{source}:{line_no}: rating {rating!r} is not an integer")
        if not 0 <= label < self.classes:
            raise DataError(f"{source}:{line_no}: rating {label + 1} outside 1..{self.classes}")

        if self.lowercase:
            text = text.lower()
        sentences = [chunk.split() for chunk in text.split(self.sentence_delimiter)]
        sentences = [sentence for sentence in sentences if sentence]
        if not sentences:
            raise DataError(f"{source}:{line_no}: empty review text")

        return ReviewDoc(user=user.strip(), product=product.strip(), label=label, sentences=sentences)

    def iter_corpus(self, path: PathLike) -> Iterator[ReviewDoc]:
        """
        Stream documents from a corpus file, one per non-blank line, in file order.

        Args:
            path (PathLike): UTF-8 corpus file

        Returns:
            Iterator[ReviewDoc]: Parsed documents
        """
        path = Path(path)
        if not path.is_file():
            raise DataError(f"corpus not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line_no, line in enumerate(f, start=1):
                    line = line.rstrip("\r\n")
                    if not line.strip():
                        continue
                    yield self.parse_line(line, line_no, str(path))
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: not valid UTF-8: {str(e)}")

    def parse_corpus(self, path: PathLike) -> List[ReviewDoc]:
        docs = list(self.iter_corpus(path))
        self.logger.info(f"Parsed {len(docs)} documents from {path}")
        return docs

    def format_line(self, doc: ReviewDoc) -> str:
        delimiter = f" {self.sentence_delimiter} "
        text = delimiter.join(" ".join(sentence) for sentence in doc.sentences)
        sep = self.field_separator
        return f"{doc.user}{sep}{doc.product}{sep}{doc.label + 1}{sep}{text}"

    def write_corpus(self, docs: Iterable[ReviewDoc], path: PathLike) -> int:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with open(path, "w", encoding="utf-8") as f:
            for doc in docs:
                f.write(self.format_line(doc) + "\n")
                count += 1
        self.logger.info(f"Wrote {count} documents to {path}")
        return count

    def corpus_stats(self, docs: Sequence[ReviewDoc], path: str = "") -> CorpusStatsRecord:
        histogram = [0] * self.classes
        sentences = words = 0
        for doc in docs:
            histogram[doc.label] += 1
            sentences += len(doc.sentences)
            words += sum(len(s) for s in doc.sentences)
        return CorpusStatsRecord(
            path=path,
            documents=len(docs),
            users=len({doc.user for doc in docs}),
            products=len({doc.product for doc in docs}),
            sentences_per_doc=sentences / len(docs) if docs else 0.0,
            words_per_sentence=words / sentences if sentences else 0.0,
            label_histogram=histogram,
        )


def split_corpus(
    docs: Sequence[ReviewDoc],
    seed: int,
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Tuple[List[ReviewDoc], List[ReviewDoc], List[ReviewDoc]]:
    """Shuffle with a seeded permutation and cut into train/dev/test."""
    order = np.random.default_rng(seed).permutation(len(docs))
    n_train = int(round(fractions[0] * len(docs)))
    n_dev = int(round(fractions[1] * len(docs)))
    shuffled = [docs[i] for i in order]
    return (
        shuffled[:n_train],
        shuffled[n_train:n_train + n_dev],
        shuffled[n_train + n_dev:],
    )
