# synthetic.py
# Packaged 30-document benchmark where the answer sits deep inside long manuals
# while short notes about the same device outrank them on the question's terms.
import json
import logging
import random
from pathlib import Path
from typing import Dict, List

logger = logging.getLogger(__name__)

DEVICE_NAMES = (
    "Zorvex", "Quillon", "Brantor", "Velmira", "Oskarin",
    "Tundrel", "Faxhelm", "Grivane", "Lumeridge", "Pexalon",
)
# none of these contain a question word, a device name or the substring "code"
FILLER_WORDS = (
    "valve", "pressure", "gasket", "torque", "bracket", "housing", "sensor", "relay",
    "coupling", "flange", "seal", "spindle", "bearing", "lever", "panel", "switch",
    "cable", "mount", "filter", "pump", "rotor", "shaft", "clamp", "washer",
    "bolt", "nozzle", "hinge", "spring", "gauge", "dial",
)
MANUAL_LINES = 400
WORDS_PER_LINE = 10
SEED = 20240611


def calibration_value(i: int) -> str:
    return f"{DEVICE_NAMES[i][:2].upper()}-{4000 + 137 * i}-{chr(ord('A') + i)}"


def manual_id(i: int) -> str:
    return f"manuals/{DEVICE_NAMES[i].lower()}_manual.md"


def _manual(i: int, rng: random.Random) -> str:
    name = DEVICE_NAMES[i]
    lines = [
        f"# {name} Field Manual",
        f"{name} calibration intervals follow {name} service policy.",
    ]
    deep = 250 + 10 * i
    for n in range(2, MANUAL_LINES):
        if n == deep:
            lines.append(f"{name} calibration code: {calibration_value(i)}")
        else:
            lines.append(" ".join(rng.choice(FILLER_WORDS) for _ in range(WORDS_PER_LINE)))
    return "\n".join(lines) + "\n"


def _notes(i: int) -> List[str]:
    name = DEVICE_NAMES[i]
    return [
        f"# {name} service note\n"
        f"{name} device calibration reminder.\n"
        f"{name} units ship with a calibration card.\n"
        f"{name} owners keep this card near each device.\n",
        f"# {name} bulletin\n"
        f"{name} device owners: calibration visits are scheduled quarterly.\n"
        f"{name} support staff bring spare calibration cards.\n"
        f"{name} device housings stay closed during visits.\n",
    ]


def build_documents() -> Dict[str, str]:
    rng = random.Random(SEED)
    docs: Dict[str, str] = {}
    for i, name in enumerate(DEVICE_NAMES):
        docs[manual_id(i)] = _manual(i, rng)
        for k, text in enumerate(_notes(i), start=1):
            docs[f"notes/{name.lower()}_note_{k}.md"] = text
    return docs


def build_queries() -> List[Dict[str, object]]:
    return [
        {
            "query_id": f"q{i + 1:02d}",
            "query": f"What is the calibration code for {name}?",
            "gold_doc_ids": [manual_id(i)],
            "split": "synthetic",
            "gold_answer": calibration_value(i),
        }
        for i, name in enumerate(DEVICE_NAMES)
    ]


def write_benchmark(out_dir: str) -> Dict[str, str]:
    """Write ``corpus/`` and ``queries.jsonl`` under ``out_dir``."""
    root = Path(out_dir)
    corpus = root / "corpus"
    for rel, text in build_documents().items():
        path = corpus / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    queries = root / "queries.jsonl"
    queries.write_text(
        "".join(json.dumps(q, sort_keys=True) + "\n" for q in build_queries()), encoding="utf-8"
    )
    logger.info("wrote synthetic benchmark to %s", root)
    return {"corpus": str(corpus), "queries": str(queries)}
