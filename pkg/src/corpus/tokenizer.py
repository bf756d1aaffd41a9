"""Word-level tokenizer over the closed template vocabulary.

Text is split into pieces: words and numbers carry their leading space, other
symbols stand alone, and email addresses are split into alphanumeric chunks
and punctuation so that an address spans several tokens. Email chunks missing
from the vocabulary fall back to single characters; any other unknown piece is
an input error. Decoding is concatenation, so encode/decode is lossless.
"""

import json
import re
import string
from pathlib import Path

from src.errors import InputError

PAD = "<pad>"

EMAIL_BODY = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"
PIECE_RE = re.compile(
    rf"(?P<email> ?{EMAIL_BODY})| ?[A-Za-z]+| ?[0-9]+| ?[^A-Za-z0-9\s]|\s",
)
EMAIL_CHUNK_RE = re.compile(r"[A-Za-z0-9]+|[^A-Za-z0-9]")

# Always present so any email can be spelled out.
BASE_SYMBOLS = (
    " ",
    "\n",
    *string.ascii_letters,
    *string.digits,
    *"._%+-@",
)


def split_pieces(text: str) -> list[tuple[str, bool]]:
    """Splits text into (piece, is_email_chunk) pairs whose concatenation is `text`."""
    pieces: list[tuple[str, bool]] = []
    for match in PIECE_RE.finditer(text):
        if match.group("email") is None:
            pieces.append((match.group(), False))
            continue
        email = match.group()
        space = " " if email.startswith(" ") else ""
        chunks = EMAIL_CHUNK_RE.findall(email.lstrip(" "))
        chunks[0] = space + chunks[0]
        pieces.extend((chunk, True) for chunk in chunks)
    return pieces


def count_pieces(text: str) -> int:
    """Number of tokens `text` encodes to when every piece is in the vocabulary."""
    return len(split_pieces(text))


class Tokenizer:
    """Maps text to token ids and back.

    Id 0 is the padding token. The vocabulary is sorted so that building from
    the same texts always yields the same ids.
    """

    def __init__(self, vocab: list[str]) -> None:
        """Initializes the tokenizer.

        Args:
            vocab (list[str]): Token strings; index is the token id, index 0 must be the pad token.

        Raises:
            InputError: If the pad token is not at index 0 or tokens repeat.
        """
        if not vocab or vocab[0] != PAD:
            raise InputError("vocabulary must start with the pad token")
        if len(set(vocab)) != len(vocab):
            raise InputError("vocabulary contains duplicate tokens")
        self.vocab = list(vocab)
        self.index = {token: i for i, token in enumerate(self.vocab)}

    @classmethod
    def build(cls, texts: list[str]) -> "Tokenizer":
        """Builds a vocabulary from every piece occurring in `texts`."""
        tokens = set(BASE_SYMBOLS)
        for text in texts:
            tokens.update(piece for piece, _ in split_pieces(text))
        return cls([PAD, *sorted(tokens)])

    @property
    def vocab_size(self) -> int:
        """Number of tokens including padding."""
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        """Id of the padding token."""
        return 0

    def encode(self, text: str) -> list[int]:
        """Converts text to token ids.

        Raises:
            InputError: If a non-email piece is not in the vocabulary.
        """
        return self.encode_with_offsets(text)[0]

    def encode_prompt(self, text: str) -> list[int]:
        """Converts a generation prompt to token ids.

        Trailing spaces are dropped: in running text a space is fused into the
        piece that follows it, so the model has to emit it as part of the
        continuation for the prompt to be a token prefix of that text.

        Raises:
            InputError: If a non-email piece is not in the vocabulary.
        """
        return self.encode(text.rstrip(" "))

    def encode_with_offsets(self, text: str) -> tuple[list[int], list[int]]:
        """Converts text to token ids and the character offset where each token starts.

        Raises:
            InputError: If a non-email piece is not in the vocabulary.
        """
        ids: list[int] = []
        offsets: list[int] = []
        position = 0
        for piece, is_email in split_pieces(text):
            if piece in self.index:
                ids.append(self.index[piece])
                offsets.append(position)
            elif is_email:
                for i, char in enumerate(piece):
                    ids.append(self.index[char])
                    offsets.append(position + i)
            else:
                raise InputError(f"unknown token {piece!r}")
            position += len(piece)
        return ids, offsets

    def decode(self, ids: list[int]) -> str:
        """Converts token ids back to text; padding decodes to nothing.

        Raises:
            InputError: If an id is outside the vocabulary.
        """
        try:
            return "".join(self.vocab[i] for i in ids if i != self.pad_id)
        except IndexError:
            raise InputError(f"token id out of range for vocabulary of {self.vocab_size}") from None

    def save(self, path: Path) -> None:
        """Writes the vocabulary as a JSON list."""
        path.write_text(json.dumps(self.vocab, ensure_ascii=False, indent=0), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Tokenizer":
        """Reads a vocabulary written by `save`."""
        return cls(json.loads(path.read_text(encoding="utf-8")))
