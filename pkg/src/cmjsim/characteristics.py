"""Characteristic evaluation engine.

A characteristic assigns to each individual a score read off its own
life and its descendants down to a fixed depth ``h`` (``h = 0`` means
the score depends on the individual's own birth process only).  The
counted process sums ``phi_u(t - S(u))`` over all individuals.

Besides plain evaluation the engine provides the conditional
projections ``phi^(k)`` (expectation given the first ``k-1``
generations below the individual), the telescoping centred
characteristic ``chi`` built from consecutive projections, and additive
shifts by a deterministic function convolved with the individual's own
birth process.  Fringe-tree indicator characteristics for ordered
rooted tree patterns form the built-in catalog together with the birth
indicator and the coming-generation (Nerman) characteristic.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CapabilityError, ConfigurationError, KnowledgeError
from .genealogy import Population
from .models import BirthLaw, Fragmentation, GaltonWatson, PoissonIntensity


# -- fringe patterns ----------------------------------------------------


@dataclass(frozen=True)
class FringePattern:
    """Finite ordered rooted tree, written as a parenthesized literal.

    ``"()"`` is a single node, ``"(()())"`` a root with two leaf
    children, and so on.
    """

    children: tuple["FringePattern", ...] = ()

    @property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    @property
    def height(self) -> int:
        return 0 if not self.children else 1 + max(c.height for c in self.children)

    def literal(self) -> str:
        return "(" + "".join(c.literal() for c in self.children) + ")"

    @classmethod
    def parse(cls, text: str) -> "FringePattern":
        s = text.strip()
        if not s:
            raise ConfigurationError("empty fringe pattern literal")
        pattern, rest = cls._parse_one(s)
        if rest:
            raise ConfigurationError(f"trailing characters in pattern literal: {rest!r}")
        return pattern

    @classmethod
    def _parse_one(cls, s: str):
        if not s.startswith("("):
            raise ConfigurationError(f"expected '(' in pattern literal near {s!r}")
        s = s[1:]
        children = []
        while s and s[0] == "(":
            child, s = cls._parse_one(s)
            children.append(child)
        if not s.startswith(")"):
            raise ConfigurationError("unbalanced fringe pattern literal")
        return cls(tuple(children)), s[1:]


LEAF = FringePattern()


def _beyond_cut(tau: float, cut: float) -> bool:
    """True when local time tau genuinely exceeds the knowledge cut.

    A relative slack absorbs the one-ulp mismatch between ``t - birth``
    computed at evaluation time and ``horizon - birth`` computed at
    sampling time.
    """
    return tau - cut > 1e-9 * max(1.0, abs(tau))


# -- characteristic base -------------------------------------------------


class Characteristic:
    """Evaluation recipe phi_u(t); immutable and safe for concurrent use."""

    h: int = 0
    vanishes_on_negative: bool = True
    name: str = "characteristic"

    def eval(self, pop: Population, nid: int, t: float) -> float:
        raise NotImplementedError

    def mean(self, t: float) -> float:
        """E[phi](t); raises when no analytic mean is available."""
        raise CapabilityError(f"{self.name} has no analytic mean function")

    def project_analytic(
        self, pop: Population, nid: int, k: int, t: float
    ) -> Optional[float]:
        """Analytic conditional projection, or None when unavailable."""
        return None


class DeterministicCharacteristic(Characteristic):
    """A deterministic cadlag score f(t); every projection equals f."""

    def __init__(self, f: Callable[[float], float], name: str = "deterministic",
                 vanishes_on_negative: bool = True):
        self.f = f
        self.h = 0
        self.name = name
        self.vanishes_on_negative = vanishes_on_negative

    def eval(self, pop, nid, t):
        return self.f(t)

    def mean(self, t):
        return self.f(t)

    def project_analytic(self, pop, nid, k, t):
        return self.f(t)


class IndicatorCharacteristic(Characteristic):
    """1 from local time 0 on: counting it gives the total births by t."""

    def __init__(self):
        self.h = 0
        self.name = "indicator"
        self.vanishes_on_negative = True

    def eval(self, pop, nid, t):
        return 1.0 if t >= 0 else 0.0

    def mean(self, t):
        return 1.0 if t >= 0 else 0.0

    def project_analytic(self, pop, nid, k, t):
        return 1.0 if t >= 0 else 0.0


class NermanCharacteristic(Characteristic):
    """Tilted mass of the individual's own future births.

    ``phi(t) = 1{t>=0} * sum over own offsets x > t of exp(-alpha(x-t))``
    (plus the conditional mean of the part beyond the knowledge cut).
    Counting with it and discounting by exp(-alpha t) reproduces the
    coming-generation martingale exactly.
    """

    def __init__(self, law: BirthLaw, alpha: float):
        self.law = law
        self.alpha = alpha
        self.h = 0
        self.name = "nerman"

    def eval(self, pop, nid, t):
        if t < 0:
            return 0.0
        a = self.alpha
        offs = pop.offsets[nid]
        lo = bisect_right(offs, t)
        total = 0.0
        for i in range(lo, len(offs)):
            total += math.exp(-a * (offs[i] - t))
        c = pop.cut[nid]
        if math.isfinite(c):
            if _beyond_cut(t, c):
                raise KnowledgeError(
                    f"node {nid}: births in ({c:g}, {t:g}] are unknown"
                )
            total += math.exp(a * t) * self.law.tilted_tail(a, c)
        return total

    def mean(self, t):
        if t < 0:
            return 0.0
        if t >= self.law.max_offset:
            return 0.0
        if isinstance(self.law, PoissonIntensity):
            # exp(alpha t) * tail evaluated stably: a exp(b t) / (alpha - b)
            a, b = self.law.a, self.law.b_exp
            return a * math.exp(b * t) / (self.alpha - b)
        return math.exp(self.alpha * t) * self.law.tilted_tail(self.alpha, t)

    def project_analytic(self, pop, nid, k, t):
        # own-life measurable: any k >= 1 sees the whole score
        if k >= 1:
            return self.eval(pop, nid, t)
        return self.mean(t)


# -- occupancy probabilities (fringe mean functions) ----------------------


def _gw_occupancy(probs: tuple[float, ...], pattern: FringePattern, d: int) -> float:
    """P(tree truncated d generations deep is order-isomorphic to pattern)."""
    if d < 0:
        return 0.0
    c = len(pattern.children)
    if d == 0:
        return 1.0 if c == 0 else 0.0
    p = probs[c] if c < len(probs) else 0.0
    for child in pattern.children:
        if p == 0.0:
            break
        p *= _gw_occupancy(probs, child, d - 1)
    return p


def _frag_occupancy(law: Fragmentation, pattern: FringePattern, s: float) -> float:
    if s < 0:
        return 0.0
    total = 0.0
    for (w, _), offs in zip(law.components, law._offsets):
        visible = [o for o in offs if o <= s]
        if len(visible) != len(pattern.children):
            continue
        p = w
        for o, sub in zip(visible, pattern.children):
            if p == 0.0:
                break
            p *= _frag_occupancy(law, sub, s - o)
        total += p
    return total


def _poisson_occupancy(law: PoissonIntensity, pattern: FringePattern, s: float) -> float:
    """Recursive nested quadrature over the ordered birth times."""
    if s < 0:
        return 0.0
    if not pattern.children:
        return math.exp(-law.cumulative_intensity(s))
    from scipy.integrate import quad

    a, b = law.a, law.b_exp

    def ordered(children, lower, s):
        if not children:
            return 1.0
        head, tail = children[0], children[1:]

        def integrand(x):
            return (
                a
                * math.exp(b * x)
                * _poisson_occupancy(law, head, s - x)
                * ordered(tail, x, s)
            )

        val, _ = quad(integrand, lower, s, epsabs=1e-11, epsrel=1e-9, limit=200)
        return val

    return math.exp(-law.cumulative_intensity(s)) * ordered(pattern.children, 0.0, s)


def occupancy_probability(law: BirthLaw, pattern: FringePattern, s: float) -> float:
    """P(family tree at local time s is order-isomorphic to the pattern)."""
    if isinstance(law, GaltonWatson):
        return _gw_occupancy(law.probs, pattern, math.floor(s) if s >= 0 else -1)
    if isinstance(law, Fragmentation):
        return _frag_occupancy(law, pattern, s)
    if isinstance(law, PoissonIntensity):
        return _poisson_occupancy(law, pattern, s)
    raise ConfigurationError(f"no occupancy formula for {law!r}")


class FringeCharacteristic(Characteristic):
    """Indicator that the subtree of births within local time t matches a pattern."""

    def __init__(self, pattern: FringePattern, law: BirthLaw):
        self.pattern = pattern
        self.law = law
        self.h = pattern.height
        self.name = f"fringe{pattern.literal()}"

    def eval(self, pop, nid, t):
        if t < 0:
            return 0.0
        return 1.0 if self._match(pop, nid, self.pattern, t) else 0.0

    def _match(self, pop, nid, pattern, tau) -> bool:
        if _beyond_cut(tau, pop.cut[nid]):
            raise KnowledgeError(
                f"node {nid}: births in ({pop.cut[nid]:g}, {tau:g}] are unknown"
            )
        offs = pop.offsets[nid]
        nvis = bisect_right(offs, tau)
        kids = pop.children[nid]
        # a birth within an ulp of the window edge whose node the simulator
        # placed past the horizon is not part of the tree at this time
        while nvis > len(kids) and not _beyond_cut(tau, offs[nvis - 1]):
            nvis -= 1
        if nvis != len(pattern.children):
            return False
        if nvis == 0:
            return True
        if nvis > len(kids):
            raise KnowledgeError(
                f"node {nid} has births within local time {tau:g} that were "
                "never materialized"
            )
        for i in range(nvis):
            if not self._match(pop, kids[i], pattern.children[i], tau - offs[i]):
                return False
        return True

    def mean(self, t):
        return occupancy_probability(self.law, self.pattern, t)

    def project_analytic(self, pop, nid, k, t):
        if not isinstance(self.law, GaltonWatson):
            return None
        if t < 0:
            return 0.0
        j = math.floor(t)
        if j <= k:
            return self.eval(pop, nid, t)
        return self._gw_partial(pop, nid, self.pattern, j, k)

    def _gw_partial(self, pop, nid, pattern, j, depth_left) -> float:
        """Match the observed part, then multiply occupancy of the frontier.

        With unit birth offsets every child of an observed node is
        visible at local time j > depth, so the observed comparison is a
        plain shape comparison down to ``depth_left`` generations; the
        frontier one level deeper needs no observed data, only the
        occupancy probability of its sub-pattern.
        """
        if depth_left == 0:
            return _gw_occupancy(self.law.probs, pattern, j)
        offs = pop.offsets[nid]
        if len(offs) != len(pattern.children):
            return 0.0
        p = 1.0
        kids = pop.children[nid]
        for i, child in enumerate(pattern.children):
            if depth_left == 1:
                p *= _gw_occupancy(self.law.probs, child, j - 1)
            else:
                if i >= len(kids):
                    raise KnowledgeError(
                        f"node {nid} has births never materialized; "
                        "projection undecidable"
                    )
                p *= self._gw_partial(pop, kids[i], child, j - 1, depth_left - 1)
            if p == 0.0:
                break
        return p


def fringe_characteristic(pattern: FringePattern, law: BirthLaw) -> FringeCharacteristic:
    return FringeCharacteristic(pattern, law)


# -- deterministic shift g * xi -------------------------------------------


class TiltedTailShift:
    """Deterministic shift with an exponential left tail.

    Represents ``g(y) = r(y)`` for ``y >= 0`` and
    ``g(y) = -a_alpha * exp(alpha y)`` for ``y < 0``; the closed-form
    tail is what makes convolutions against latent births computable.
    """

    def __init__(self, r: Callable[[float], float], a_alpha: float, alpha: float):
        self.r = r
        self.a_alpha = a_alpha
        self.alpha = alpha

    def __call__(self, y: float) -> float:
        if y < 0:
            return -self.a_alpha * math.exp(self.alpha * y)
        return self.r(y)

    def tail_convolution(self, law: BirthLaw, tau: float, cut: float) -> float:
        """Integral of g(tau - x) mu(dx) over (cut, inf); needs tau <= cut."""
        if _beyond_cut(tau, cut):
            raise KnowledgeError("shift tail needs tau <= knowledge cut")
        return -self.a_alpha * math.exp(self.alpha * tau) * law.tilted_tail(
            self.alpha, cut
        )

def convolve_intensity(law: BirthLaw, g, tau: float) -> float:
    """Integral of g(tau - x) mu(dx) over [0, inf).

    Exact for laws with atomic intensity; the Poisson path needs the
    closed-form exponential left tail of :class:`TiltedTailShift`.
    """
    if isinstance(law, GaltonWatson):
        return law.mean_offspring * g(tau - 1.0)
    if isinstance(law, Fragmentation):
        total = 0.0
        for (w, _), offs in zip(law.components, law._offsets):
            total += w * sum(g(tau - o) for o in offs)
        return total
    if isinstance(law, PoissonIntensity):
        if not isinstance(g, TiltedTailShift):
            raise CapabilityError(
                "convolving against a Poisson intensity needs a shift with a "
                "closed-form exponential tail"
            )
        from scipy.integrate import quad

        pos = 0.0
        if tau > 0:
            pos, _ = quad(
                lambda x: g.r(tau - x) * law.a * math.exp(law.b_exp * x),
                0.0,
                tau,
                epsabs=1e-11,
                epsrel=1e-9,
                limit=200,
            )
        neg = -g.a_alpha * math.exp(g.alpha * tau) * law.tilted_tail(
            g.alpha, max(tau, 0.0)
        )
        return pos + neg
    raise ConfigurationError(f"no intensity convolution for {law!r}")


class ShiftedCharacteristic(Characteristic):
    """base + g * xi: add the shift applied across the node's own births."""

    def __init__(self, base: Characteristic, g: Callable[[float], float], law: BirthLaw):
        self.base = base
        self.g = g
        self.law = law
        self.h = base.h
        self.name = f"{base.name}+shift"
        self.vanishes_on_negative = False

    def _own_convolution(self, pop, nid, t) -> float:
        total = 0.0
        for x in pop.offsets[nid]:
            total += self.g(t - x)
        c = pop.cut[nid]
        if math.isfinite(c):
            if isinstance(self.g, TiltedTailShift):
                total += self.g.tail_convolution(self.law, t, c)
            else:
                raise KnowledgeError(
                    f"node {nid} has latent births and the shift has no "
                    "closed-form tail"
                )
        return total

    def eval(self, pop, nid, t):
        return self.base.eval(pop, nid, t) + self._own_convolution(pop, nid, t)

    def mean(self, t):
        return self.base.mean(t) + convolve_intensity(self.law, self.g, t)

    def project_analytic(self, pop, nid, k, t):
        if k == 0:
            return self.mean(t)
        inner = self.base.project_analytic(pop, nid, k, t)
        if inner is None:
            return None
        return inner + self._own_convolution(pop, nid, t)


def shifted_characteristic(
    char: Characteristic, g: Callable[[float], float], law: BirthLaw
) -> ShiftedCharacteristic:
    """New characteristic phi'(u, t) = phi(u, t) + sum_i g(t - X_{u,i})."""
    return ShiftedCharacteristic(char, g, law)


# -- counted process ------------------------------------------------------


def counted_process(pop: Population, char: Characteristic, t: float) -> float:
    """Z_t^phi: sum of phi_u(t - S(u)) over all materialized individuals."""
    if not char.vanishes_on_negative:
        raise CapabilityError(
            f"{char.name} does not vanish on the negative half-line; the "
            "counted process needs every future individual"
        )
    if t > pop.horizon:
        raise KnowledgeError(
            f"t = {t:g} exceeds the simulated horizon {pop.horizon:g}"
        )
    total = 0.0
    n_born = pop.count_births(t)
    for u in range(n_born):
        total += char.eval(pop, u, t - pop.birth[u])
    return total


# -- conditional projections ----------------------------------------------


@dataclass(frozen=True)
class ProjectionContext:
    """Knobs for the generic projection evaluator."""

    law: BirthLaw
    rng: Optional[np.random.Generator] = None
    nested_m: int = 200


def project(
    char: Characteristic,
    pop: Population,
    nid: int,
    k: int,
    t: float,
    ctx: ProjectionContext,
) -> float:
    """phi^(k)(t) at a node: conditional expectation given k-1 generations below.

    ``k = 0`` is the unconditional mean, ``k >= h+1`` the exact value.
    Intermediate levels use the characteristic's analytic projection
    when available, otherwise a nested Monte Carlo average over
    ``ctx.nested_m`` resampled completions of the unobserved
    generations.
    """
    if k < 0 or k > char.h + 1:
        raise ConfigurationError(f"projection level k={k} outside 0..h+1")
    if k == 0:
        return char.mean(t)
    if k >= char.h + 1:
        return char.eval(pop, nid, t)
    val = char.project_analytic(pop, nid, k, t)
    if val is not None:
        return val
    if ctx.rng is None or ctx.nested_m <= 0:
        raise CapabilityError(
            f"{char.name} has no analytic projection at k={k} and nested "
            "Monte Carlo is disabled"
        )
    return _nested_mc_projection(char, pop, nid, k, t, ctx)


def _copy_subtree(src: Population, nid: int, depth: int, law: BirthLaw) -> Population:
    """Clone the observed subtree of nid down to ``depth`` generations."""
    view = Population(law, None, None)
    view.horizon = math.inf
    view.add_node(-1, 0.0, 0)
    view.offsets[0] = list(src.offsets[nid])
    view.cut[0] = src.cut[nid]
    frontier = [(nid, 0, 0)]
    while frontier:
        old, new, d = frontier.pop()
        if d >= depth:
            continue
        offs = src.offsets[old]
        kids = src.children[old]
        if len(offs) > len(kids):
            raise KnowledgeError(
                f"node {old}: observed births lack materialized children; "
                "projection context incomplete"
            )
        for i, x in enumerate(offs):
            child_new = view.add_node(new, view.birth[new] + x, i)
            child_old = kids[i]
            view.offsets[child_new] = list(src.offsets[child_old])
            view.cut[child_new] = src.cut[child_old]
            frontier.append((child_old, child_new, d + 1))
    return view


def _grow_fresh(view: Population, nid: int, depth_left: int, window: float,
                law: BirthLaw, rng: np.random.Generator) -> None:
    offs, cut = law.sample_offsets(rng, max(window, 0.0))
    view.offsets[nid] = offs
    view.cut[nid] = cut
    if depth_left <= 0:
        return
    for i, x in enumerate(offs):
        child = view.add_node(nid, view.birth[nid] + x, i)
        _grow_fresh(view, child, depth_left - 1, window - x, law, rng)


def _nested_mc_projection(char, pop, nid, k, t, ctx) -> float:
    rng = ctx.rng
    law = ctx.law
    acc = 0.0
    for _ in range(ctx.nested_m):
        view = _copy_subtree(pop, nid, k - 1, law)
        # fresh completions below the observed generations
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if d == k - 1:
                base_offsets = view.offsets[node]
                existing = len(view.children[node])
                for i in range(existing, len(base_offsets)):
                    x = base_offsets[i]
                    child = view.add_node(node, view.birth[node] + x, i)
                    _grow_fresh(
                        view, child, char.h - d - 1, t - view.birth[child], law, rng
                    )
                continue
            for child in view.children[node]:
                stack.append((child, d + 1))
        acc += char.eval(view, 0, t)
    return acc / ctx.nested_m


# -- centred characteristic ------------------------------------------------


def chi(
    char: Characteristic,
    pop: Population,
    s: float,
    ctx: ProjectionContext,
) -> float:
    """Telescoping centred characteristic evaluated on a rooted context.

    Sums, over the individuals of the first h generations, the
    difference between consecutive conditional projections at local time
    s - S(u).  Its mean is zero at every s; its second moment drives the
    limit variance.
    """
    h = char.h
    total = 0.0
    for u in range(len(pop)):
        g = pop.gen[u]
        if g > h:
            continue
        if g <= h - 1:
            offs = pop.offsets[u]
            if len(offs) > len(pop.children[u]):
                raise KnowledgeError(
                    f"node {u}: generation {g + 1} incomplete in the chi context"
                )
        tau = s - pop.birth[u]
        hi = project(char, pop, u, h + 1 - g, tau, ctx)
        lo = project(char, pop, u, h - g, tau, ctx)
        total += hi - lo
    return total


def build_chi_context(
    law: BirthLaw,
    h: int,
    s: float,
    rng: np.random.Generator,
    *,
    tail_window: float = 0.0,
) -> Population:
    """Fresh root population carrying every individual of generations 0..h.

    For laws of infinite total intensity the children of each node are
    materialized up to local time ``max(s - birth, 0) + tail_window``;
    everything farther out only enters centred sums through terms that
    decay exponentially in the distance, which is what the tail window
    controls.

    One generation past h is added as bare nodes whose knowledge cut is
    the law's minimum offset: evaluations may touch them, but only at
    local times below the first possible birth.
    """
    view = Population(law, None, None)
    view.horizon = math.inf
    root = view.add_node(-1, 0.0, 0)
    level = [root]
    for depth in range(h + 1):
        next_level = []
        for nid in level:
            window = max(s - view.birth[nid], 0.0) + tail_window
            offs, cut = law.sample_offsets(rng, window)
            view.offsets[nid] = offs
            view.cut[nid] = cut
            for i, x in enumerate(offs):
                child = view.add_node(nid, view.birth[nid] + x, i)
                if depth < h:
                    next_level.append(child)
                else:
                    view.cut[child] = law.min_offset
        level = next_level
    return view
