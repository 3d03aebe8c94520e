#!/usr/bin/env python3
"""Regenerates the bundled directory fixtures under data/ and tests/data/."""
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIRST = ["Anna", "Bruno", "Carla", "Daniel", "Elena", "Felipe", "Greta", "Hannah", "Ivan", "Julia",
         "Karim", "Laura", "Marcus", "Nadia", "Oliver", "Paula", "Rafael", "Sophie", "Thomas", "Vanessa"]
LAST = ["Smith", "Goldsmith", "Meyer", "Garcia", "Fischer", "Moreau", "Santos", "Kumar", "Tanaka", "Novak",
        "Rossi", "Weber", "Dubois", "Jensen", "Silva", "Petrov", "Okafor", "Larsen", "Haddad", "Nguyen"]
CITIES = ["Berlin", "Lyon", "Porto", "Osaka", "Pune", "Recife", "Bergen", "Turin"]
COUNTRIES = ["DE", "FR", "PT", "JP", "IN", "BR", "NO", "IT"]


def row(rtc_id, email, birth=None, first=None, last=None, extras=False, rng=None):
    city = country = lang = age = gender = home = ""
    if extras:
        i = rng.randrange(len(CITIES))
        city, country = CITIES[i], COUNTRIES[i]
        lang = "en"
        age = str(rng.randint(18, 70))
        gender = rng.choice(["f", "m"])
    cols = [rtc_id, email, birth or "", first or "", last or "", city, country, lang, age, gender, home, "", "", "0"]
    return "\t".join(cols)


def directory(rng, n=1000):
    # 88% with a birth name drawn from the lists, the rest nameless.
    lines = []
    for i in range(n):
        rid = f"member.{i:05d}"
        mail = f"{rid}@fixture.invalid"
        if i % 100 < 88:
            f, l = rng.choice(FIRST), rng.choice(LAST)
            lines.append(row(rid, mail, f"{f} {l}", f, l, rng.random() < 0.82, rng))
        else:
            lines.append(row(rid, mail, extras=rng.random() < 0.3, rng=rng))
    return lines


def harvest_fixture(rng):
    # 100 discoverable profiles: 88 by birth name, 12 only through an ID equal
    # to a searched name; plus 20 profiles no search string reaches.
    lines = []
    for i in range(88):
        f, l = rng.choice(FIRST), rng.choice(LAST)
        rid = f"person.{i:03d}"
        lines.append(row(rid, f"{rid}@fixture.invalid", f"{f} {l}", f, l, rng.random() < 0.5, rng))
    long_names = [n.lower() for n in FIRST + LAST if len(n) >= 6][:12]
    assert len(long_names) == 12
    for n in long_names:
        lines.append(row(n, f"{n}@fixture.invalid"))
    for i in range(20):
        rid = f"hidden.{i:03d}"
        lines.append(row(rid, f"{rid}@fixture.invalid", birth="Zed Quill" if i % 2 else None))
    return lines


def main():
    rng = random.Random(20111102)
    (ROOT / "data").mkdir(exist_ok=True)
    (ROOT / "tests" / "data").mkdir(parents=True, exist_ok=True)
    (ROOT / "data" / "first_names.txt").write_text("\n".join(FIRST) + "\n")
    (ROOT / "data" / "last_names.txt").write_text("\n".join(LAST) + "\n")
    (ROOT / "data" / "directory.tsv").write_text("\n".join(directory(rng)) + "\n")
    (ROOT / "tests" / "data" / "harvest_100.tsv").write_text("\n".join(harvest_fixture(rng)) + "\n")


if __name__ == "__main__":
    main()
