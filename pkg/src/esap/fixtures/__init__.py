"""Deterministic fixtures: a mini music-store database and reference tables.

The SQLite seeder always produces the same bytes-equivalent content, so
tests can hash the file to prove queries never mutate it. The JSON files
hold benchmark reference rows and the natural-language-to-SQL prompt
variants used as replay fixtures.
"""

from __future__ import annotations

import json
import sqlite3
from importlib import resources
from pathlib import Path

TRACKS = [
    (1, "Midnight Drive", "Rock", 0.99),
    (2, "City Lights", "Hip Hop", 1.29),
    (3, "Low Orbit", "hip-hop", 0.99),
    (4, "Golden Hour", "Hip Hop/Rap", 1.49),
    (5, "Quiet Harbor", "Jazz", 1.99),
]

CUSTOMERS = [
    (1, "Ada", "Lovelace"),
    (2, "Alan", "Turing"),
    (3, "Grace", "Hopper"),
]

# (invoice_id, customer_id, invoice_date, total); monthly totals strictly
# increase, and the last two rows are intentionally future-dated
INVOICES = [
    (1, 1, "2025-01-20", 3.27),
    (2, 2, "2025-02-18", 4.46),
    (3, 3, "2025-03-15", 5.97),
    (4, 1, "2025-04-10", 7.05),
    (5, 2, "2025-07-01", 9.95),
    (6, 3, "2025-12-31", 11.90),
]

INVOICE_LINES = [
    (1, 1, 1, 0.99, 2),
    (2, 1, 2, 1.29, 1),
    (3, 2, 3, 0.99, 3),
    (4, 2, 4, 1.49, 1),
    (5, 3, 5, 1.99, 3),
    (6, 4, 4, 1.49, 3),
    (7, 4, 2, 1.29, 2),
    (8, 5, 5, 1.99, 5),
    (9, 6, 1, 0.99, 8),
    (10, 6, 5, 1.99, 2),
]

_SCHEMA = """
CREATE TABLE chinook_track (
    track_id   INTEGER PRIMARY KEY,
    name       TEXT NOT NULL,
    genre      TEXT NOT NULL,
    unit_price REAL NOT NULL
);
CREATE TABLE chinook_customer (
    customer_id INTEGER PRIMARY KEY,
    first_name  TEXT NOT NULL,
    last_name   TEXT NOT NULL
);
CREATE TABLE chinook_invoice (
    invoice_id   INTEGER PRIMARY KEY,
    customer_id  INTEGER NOT NULL REFERENCES chinook_customer(customer_id),
    invoice_date TEXT NOT NULL,
    total        REAL NOT NULL
);
CREATE TABLE chinook_invoice_line (
    invoice_line_id INTEGER PRIMARY KEY,
    invoice_id      INTEGER NOT NULL REFERENCES chinook_invoice(invoice_id),
    track_id        INTEGER NOT NULL REFERENCES chinook_track(track_id),
    unit_price      REAL NOT NULL,
    quantity        INTEGER NOT NULL
);
"""


def seed_music_db(path: str | Path) -> Path:
    """Create (or overwrite) the music-store fixture database."""
    path = Path(path)
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    try:
        conn.executescript(_SCHEMA)
        conn.executemany("INSERT INTO chinook_track VALUES (?,?,?,?)", TRACKS)
        conn.executemany("INSERT INTO chinook_customer VALUES (?,?,?)",
                         CUSTOMERS)
        conn.executemany("INSERT INTO chinook_invoice VALUES (?,?,?,?)",
                         INVOICES)
        conn.executemany("INSERT INTO chinook_invoice_line VALUES (?,?,?,?,?)",
                         INVOICE_LINES)
        conn.commit()
    finally:
        conn.close()
    return path


def load_fixture(name: str) -> dict:
    """Load one of the packaged JSON fixture files by bare name."""
    data = resources.files(__package__).joinpath(f"{name}.json").read_text(
        encoding="utf-8")
    return json.loads(data)
