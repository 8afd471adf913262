"""Built-in structure files shipped with the package."""
from importlib import resources

from ..symcalc.structure import SRStructure, parse_structure


def names() -> list[str]:
    return sorted(p.name[:-3] for p in resources.files(__name__).iterdir() if p.name.endswith(".sr"))


def text(name: str) -> str:
    try:
        return resources.files(__name__).joinpath(f"{name}.sr").read_text()
    except FileNotFoundError:
        raise KeyError(f"no built-in structure {name!r}; available: {', '.join(names())}") from None


def load(name: str) -> SRStructure:
    return parse_structure(text(name), name)
