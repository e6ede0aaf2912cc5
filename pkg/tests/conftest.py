import pytest

from toolforge.generation import (
    SeedTriple,
    SynthesisConfig,
    gold_passage_id,
    synthesize,
)
from toolforge.patterns import default_catalog
from toolforge.retrieval import Document, build_index
from toolforge.simulator import SimulatorBackend
from toolforge.tools import ToolSet, default_base_tools


def make_seed(i: int, n_gold: int = 3) -> SeedTriple:
    golden = tuple(
        {"title": f"passage {i}.{g}",
         "text": f"supporting passage number {g} about topic {i} in the archive "
                 f"records rivers cities and events of era {g}"}
        for g in range(n_gold)
    )
    return SeedTriple(
        id=f"seed{i:03d}",
        question=f"what connects topic {i} to the records of the archive?",
        answer=f"the documented link for topic {i}",
        golden_context=golden,
    )


def index_for(seeds, distractors: int = 10):
    docs = []
    for seed in seeds:
        for n, passage in enumerate(seed.golden_context):
            docs.append(Document(gold_passage_id(seed.id, n),
                                 passage["title"], passage["text"]))
    for d in range(distractors):
        docs.append(Document(
            f"noise{d:02d}", f"filler {d}",
            f"unrelated filler document {d} covering archives topics records"))
    return build_index(docs)


@pytest.fixture(scope="session")
def toolset():
    return ToolSet(default_base_tools())


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def backend():
    return SimulatorBackend(seed=0)


@pytest.fixture(scope="session")
def sample_factory(toolset, catalog, backend):
    """Deterministic clean sample per pattern id, cached per session."""
    cache = {}
    seed = make_seed(0, n_gold=6)
    index = index_for([seed])

    def factory(pattern_id="flow_01", seed_triple=None, run_seed=0):
        key = (pattern_id, seed_triple.id if seed_triple else None, run_seed)
        if key not in cache:
            active = seed_triple or seed
            idx = index if seed_triple is None else index_for([seed_triple])
            cfg = SynthesisConfig(forced_pattern_id=pattern_id, run_seed=run_seed)
            cache[key] = synthesize(active, toolset, catalog, idx, backend, cfg)
        return cache[key]

    return factory


@pytest.fixture
def clean_sample(sample_factory):
    return sample_factory("flow_01")
