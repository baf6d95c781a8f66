"""Shared verdict table for the acceptance suite, printed by conftest."""

VERDICTS: dict[int, tuple[bool, str]] = {}


def record(number: int, ok: bool, detail: str) -> None:
    VERDICTS[number] = (ok, detail)
    print(line(number))


def line(number: int) -> str:
    ok, detail = VERDICTS[number]
    return f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
