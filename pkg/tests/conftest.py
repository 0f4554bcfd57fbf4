import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from siliconhealth.dhf import DeviceRegistry, generate_proof, make_device  # noqa: E402
from siliconhealth.hashcore import Difficulty  # noqa: E402
from siliconhealth.ledger import Ledger  # noqa: E402
from siliconhealth.records import HealthRecord, RecordType, leaf_hash, make_record_id  # noqa: E402

EASY = Difficulty(4, 256)
FAC_A = b"facA\x00\x00\x00\x01"
FAC_B = b"facB\x00\x00\x00\x02"
T0 = 1_700_000_000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class World:
    """Two registered devices and a helper to mint proven records."""

    def __init__(self, seed=7):
        self.rng = np.random.default_rng(seed)
        self.registry = DeviceRegistry()
        self.dev_a = make_device("lv06", self.rng)
        self.dev_b = make_device("s9", self.rng)
        self.registry.register(self.dev_a)
        self.registry.register(self.dev_b)
        self.seq = {}

    def ledger(self, facility=FAC_A):
        return Ledger(facility, self.registry, EASY)

    def record(self, facility=FAC_A, seq=None, text="visit", created_at=T0, flags=0, birth=1990):
        if seq is None:
            seq = self.seq[facility] = self.seq.get(facility, 0) + 1
        return HealthRecord(make_record_id(facility, seq), bytes(32), facility, RecordType.VISIT,
                            created_at, flags, birth, text.encode())

    def prove(self, record, device=None, now=None):
        device = device or (self.dev_a if record.facility_id == FAC_A else self.dev_b)
        proof, _ = generate_proof(device, leaf_hash(record), EASY, record.created_at if now is None else now,
                                  self.rng)
        return proof

    def add(self, ledger, **kw):
        r = self.record(ledger.facility_id, **kw)
        ledger.append_record(r, self.prove(r))
        return r


@pytest.fixture
def world():
    return World()


# -- acceptance reporting ---------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    details = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    ok = call.excinfo is None
    prev = _criteria.get(number)
    joined = "; ".join(d for d in ((prev[2] if prev else ""), details) if d)
    _criteria[number] = (title, (prev[1] if prev else True) and ok, joined)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, details = _criteria[number]
        line = f"{'PASS' if ok else 'FAIL'}  #{number:<2} {title}"
        terminalreporter.write_line(line + (f"  [{details}]" if details else ""))
