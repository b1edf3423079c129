"""Stock models used by tests, experiments, and the CLI.

Three sizes of the strongly critical cascade plus a tiny joint-table
model whose short-horizon behaviour can be enumerated exhaustively.
"""

from __future__ import annotations

from .families import Geometric, Poisson
from .model import ProcessSpec, ProductLaw, TableLaw


def single_geometric() -> ProcessSpec:
    """One type, Geometric(1) offspring.

    The analytic anchor: every engine quantity has a closed form.
    Iterates are rational, the extinction complement is 1/(n+1), and
    the harmonic limit is s/(1-s).
    """
    return ProcessSpec(
        n_types=1,
        laws=(ProductLaw(parent=1, children={1: Geometric(1.0)}),),
        name="single_geometric",
    )


def two_type_cascade() -> ProcessSpec:
    """Two types: Geometric(1) own-type counts, Poisson(1) feed.

    b_1 = b_2 = 1 and a unit link mean, so every derived constant is
    exactly one and decay exponents are (1/2, 1).
    """
    return ProcessSpec(
        n_types=2,
        laws=(
            ProductLaw(parent=1, children={1: Geometric(1.0),
                                           2: Poisson(1.0)}),
            ProductLaw(parent=2, children={2: Geometric(1.0)}),
        ),
        name="two_type_cascade",
    )


def three_type_chain() -> ProcessSpec:
    """Three types in a symmetric chain; decay exponents (1/4, 1/2, 1)."""
    return ProcessSpec(
        n_types=3,
        laws=(
            ProductLaw(parent=1, children={1: Geometric(1.0),
                                           2: Poisson(1.0)}),
            ProductLaw(parent=2, children={2: Geometric(1.0),
                                           3: Poisson(1.0)}),
            ProductLaw(parent=3, children={3: Geometric(1.0)}),
        ),
        name="three_type_chain",
    )


def micro_table() -> ProcessSpec:
    """Two-type joint-table model small enough to enumerate exactly.

    Type 1: (0,0) w.p. 0.4, (2,0) w.p. 0.4, (1,1) w.p. 0.2
            -> own mean 1, link mean 0.2, b_1 = 0.4.
    Type 2: 0 or 2 children w.p. 1/2 each -> b_2 = 0.5.
    """
    return ProcessSpec(
        n_types=2,
        laws=(
            TableLaw(parent=1, rows=(((0, 0), 0.4),
                                     ((2, 0), 0.4),
                                     ((1, 1), 0.2))),
            TableLaw(parent=2, rows=(((0, 0), 0.5),
                                     ((0, 2), 0.5))),
        ),
        name="micro_table",
    )


STOCK_MODELS = {
    "single_geometric": single_geometric,
    "two_type_cascade": two_type_cascade,
    "three_type_chain": three_type_chain,
    "micro_table": micro_table,
}


def stock_model(name: str) -> ProcessSpec:
    """Look up a stock model by name."""
    try:
        return STOCK_MODELS[name]()
    except KeyError:
        known = ", ".join(sorted(STOCK_MODELS))
        raise KeyError(f"unknown stock model '{name}' (known: {known})") from None
