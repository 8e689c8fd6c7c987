"""READ/WRITE action codes and conversions to and from action strings."""

READ = 0
WRITE = 1

_CHARS = {READ: "R", WRITE: "W"}


def to_string(actions) -> str:
    return "".join(_CHARS[int(a)] for a in actions)


def from_string(s: str) -> list[int]:
    out = []
    for ch in s.replace(" ", "").upper():
        if ch == "R":
            out.append(READ)
        elif ch == "W":
            out.append(WRITE)
        else:
            raise ValueError(f"bad action character {ch!r}")
    return out
