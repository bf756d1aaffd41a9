"""Data subjects: people whose email addresses are planted in the corpus."""

import re

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.errors import CapacityError, ParameterError

EMAIL_PATTERN = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"
EMAIL_RE = re.compile(EMAIL_PATTERN)

FIRST_NAMES = (
    "Aaron", "Alice", "Amber", "Andrew", "Angela", "Barbara", "Brian", "Carl",
    "Carol", "Chris", "Daniel", "David", "Debra", "Dennis", "Diana", "Donald",
    "Edward", "Elaine", "Emily", "Eric", "Frank", "Gary", "Grace", "Helen",
    "Henry", "Irene", "Jack", "James", "Janet", "Jason", "Jeff", "Jenny",
    "Karen", "Kevin", "Laura", "Linda", "Louise", "Mark", "Martin", "Mary",
    "Michael", "Nancy", "Nathan", "Nora", "Oliver", "Pamela", "Paul", "Peter",
    "Rachel", "Richard", "Robert", "Sally", "Sandra", "Scott", "Sharon", "Steven",
    "Susan", "Thomas", "Tina", "Victor", "Walter", "Wendy", "William", "Zoe",
)

LAST_NAMES = (
    "Adams", "Allen", "Arnold", "Baker", "Barnes", "Bell", "Brooks", "Brown",
    "Carter", "Clark", "Collins", "Cook", "Cooper", "Davis", "Dixon", "Evans",
    "Fisher", "Ford", "Foster", "Garcia", "Gibson", "Grant", "Gray", "Green",
    "Hall", "Harris", "Hayes", "Hill", "Howard", "Hughes", "Hunt", "Jackson",
    "Jones", "Kelly", "Kennedy", "King", "Lambert", "Lewis", "Lopez", "Marshall",
    "Martin", "Mason", "Miller", "Moore", "Morgan", "Murphy", "Nelson", "Owens",
    "Parker", "Perry", "Price", "Reed", "Rogers", "Ross", "Russell", "Shaw",
    "Simpson", "Stone", "Taylor", "Turner", "Walker", "Ward", "Watson", "Young",
)

DOMAINS = (
    "enron.com",
    "corp.com",
    "energy.net",
    "trading.com",
    "power.org",
    "gas.net",
    "mail.com",
    "market.com",
)

# Local-part layouts; each yields a "word.word" local part.
EMAIL_LAYOUTS = ("first.last", "initial.last", "last.first")


class Subject(BaseModel):
    """A person with a name and a unique email address.

    Attributes:
        subject_id (int): Stable index of the subject within its run.
        first (str): Capitalized first name.
        last (str): Capitalized last name.
        email (str): Lowercase address of the form word.word@word.word.
    """

    model_config = ConfigDict(frozen=True)

    subject_id: int
    first: str
    last: str
    email: str

    @field_validator("email")
    @classmethod
    def check_email(cls, value: str) -> str:
        """Rejects addresses the labeling regex would not detect."""
        if EMAIL_RE.fullmatch(value) is None:
            raise ValueError(f"not a detectable email address: {value!r}")
        return value

    @property
    def name(self) -> str:
        """The full name, "First Last"."""
        return f"{self.first} {self.last}"


def pool_capacity() -> int:
    """The number of unique (first, last) name pairs available."""
    return len(FIRST_NAMES) * len(LAST_NAMES)


def _local_part(first: str, last: str, layout: str) -> str:
    first, last = first.lower(), last.lower()
    if layout == "first.last":
        return f"{first}.{last}"
    if layout == "initial.last":
        return f"{first[0]}.{last}"
    return f"{last}.{first}"


def generate_subjects(n: int, seed: int) -> list[Subject]:
    """Draws `n` subjects with unique names and unique email addresses.

    Args:
        n (int): Number of subjects.
        seed (int): Seed for the draw; equal seeds give equal lists.

    Returns:
        list[Subject]: Subjects with ids 0..n-1.

    Raises:
        ParameterError: If n < 1.
        CapacityError: If n exceeds the number of unique name pairs.
    """
    if n < 1:
        raise ParameterError(f"need at least one subject, got {n}")
    capacity = pool_capacity()
    if n > capacity:
        raise CapacityError(f"requested {n} subjects but the name pools hold {capacity}")

    rng = np.random.default_rng(seed)
    picks = rng.permutation(capacity)[:n]
    used: set[str] = set()
    subjects = []
    for subject_id, pick in enumerate(picks):
        first = FIRST_NAMES[pick // len(LAST_NAMES)]
        last = LAST_NAMES[pick % len(LAST_NAMES)]
        layout_start = int(rng.integers(len(EMAIL_LAYOUTS)))
        domain_start = int(rng.integers(len(DOMAINS)))
        # first.last is unique per name pair, so the search always terminates
        for offset in range(len(EMAIL_LAYOUTS) * len(DOMAINS)):
            layout = EMAIL_LAYOUTS[(layout_start + offset // len(DOMAINS)) % len(EMAIL_LAYOUTS)]
            domain = DOMAINS[(domain_start + offset) % len(DOMAINS)]
            email = f"{_local_part(first, last, layout)}@{domain}"
            if email not in used:
                break
        used.add(email)
        subjects.append(Subject(subject_id=subject_id, first=first, last=last, email=email))
    return subjects
