# catalog.py
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Union

from dotenv import load_dotenv

from errors import ProblemNotFoundError, ProblemParseError
from models import ExampleSummary, ProblemFile, ProblemSelector
from problems import BUILTIN_PROBLEMS, load_problem

# Cargar variables de entorno al inicio del módulo
load_dotenv()

logger = logging.getLogger(__name__)

NF_PROBLEMS_DIR = os.getenv("NF_PROBLEMS_DIR")
NF_DEFAULT_SEED = int(os.getenv("NF_DEFAULT_SEED", "20240531"))
NF_LOG_LEVEL = os.getenv("NF_LOG_LEVEL", "INFO").upper()
PORT = int(os.getenv("PORT", "8000"))

# Global problem registry
catalog: Optional[Dict[str, ProblemFile]] = None
sources: Dict[str, str] = {}


def init_catalog(problems_dir: Optional[str] = None) -> Dict[str, ProblemFile]:
    """Build the registry from the built-in examples and the problems directory"""
    global catalog, sources
    if catalog is not None and problems_dir is None:
        return catalog

    registry: Dict[str, ProblemFile] = dict(BUILTIN_PROBLEMS)
    origin = {name: "builtin" for name in registry}
    directory = problems_dir or NF_PROBLEMS_DIR
    if directory:
        root = Path(directory)
        if not root.is_dir():
            logger.warning(f"⚠️ NF_PROBLEMS_DIR {directory} is not a directory, skipping")
        else:
            for path in sorted(root.glob("*.json")):
                try:
                    problem = load_problem(path)
                except ProblemParseError as e:
                    logger.warning(f"⚠️ Skipping {path.name}: {e}")
                    continue
                if problem.name in registry:
                    logger.warning(f"⚠️ {path.name} overrides problem '{problem.name}'")
                registry[problem.name] = problem
                origin[problem.name] = str(path)

    catalog, sources = registry, origin
    logger.info(f"✅ Catalog ready with {len(registry)} problems")
    return catalog


def get_catalog() -> Dict[str, ProblemFile]:
    """Get the problem registry"""
    if catalog is None:
        raise RuntimeError("Catalog not initialized")
    return catalog


def get_problem(name: str) -> ProblemFile:
    problems = get_catalog()
    if name not in problems:
        raise ProblemNotFoundError(f"Unknown problem '{name}' (known: {', '.join(sorted(problems))})")
    return problems[name]


def list_examples() -> List[ExampleSummary]:
    return [
        ExampleSummary(
            name=name,
            label=problem.label,
            n_slow_pairs=problem.n_slow_pairs,
            source=sources.get(name, "builtin"),
        )
        for name, problem in sorted(get_catalog().items())
    ]


def resolve_problem(ref: Union[str, Path]) -> ProblemFile:
    """A path to a problem file, or the name of a catalog entry"""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return load_problem(path)
    init_catalog()
    return get_problem(str(ref))


def select_problem(selector: ProblemSelector) -> ProblemFile:
    """Inline problem of a request, or its catalog entry"""
    if selector.problem is not None:
        return selector.problem
    return get_problem(selector.example)
