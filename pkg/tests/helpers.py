from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
TABLE1 = ROOT / "configs" / "table1.yaml"

# one "CRITERION n: PASS/FAIL ..." line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict = {}


def record(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[number] = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok
