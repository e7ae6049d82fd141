"""Subgroup PAC-Bayes bound arithmetic and Monte-Carlo checks of its lemmas.

Priors and posteriors are isotropic Gaussians over the vectorised MLP weights.
Every Monte-Carlo loop seeds draw ``i`` with ``seed + i`` so results do not
depend on how draws are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    MlpClassifier,
    check_label_field,
    expected_margin_loss_from_logits,
    forward,
    margin_loss_from_logits,
    margins,
    weight_norms,
)
from .subgroups import build_near_sets

LN3 = math.log(3.0)


class HypothesisNotMet(ValueError):
    """The margin-loss-difference lemma's spectral condition does not hold."""


class DegenerateDistance(ValueError):
    """epsilon_m == 0: the prior variance bound is unbounded."""


class InsufficientConditioningMass(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    sigma: float
    dims: tuple  # (input, hidden..., K)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("prior sigma must be positive")
        if len(self.dims) < 2:
            raise ValueError("dims needs at least input and output sizes")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def depth(self) -> int:
        return len(self.dims) - 1


@dataclass(frozen=True, eq=False)
class PosteriorSpec:
    center: MlpClassifier
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("posterior sigma must be positive")


@dataclass(frozen=True)
class BoundConfig:
    gamma: float | None = None  # None: median training margin, floored at 0.1
    alpha: float = 0.2
    lam: float | None = None  # None: N_0 ** (2 alpha)
    delta: float = 0.05
    c: float | None = None
    K: int | None = None
    mc_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.25:
            raise ValueError("alpha must be in (0, 0.25)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive (the covering count needs gamma > 0)")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.c is not None and self.c < 0:
            raise ValueError("c must be non-negative")
        if self.mc_samples < 0:
            raise ValueError("mc_samples must be non-negative")


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    std_err: float
    n: int


# --------------------------------------------------------------------------
# Gaussian machinery


def prior_sigma(gamma, epsilon_m, L, b, lam, N_0, alpha) -> float:
    """Largest sigma with sigma^2 <= (gamma/8eps)^(2/L) / (2b(lam N_0^-alpha + ln 2bL))."""
    if epsilon_m <= 0:
        raise DegenerateDistance("epsilon_m is zero; use the fallback sigma")
    for name, v in (("gamma", gamma), ("L", L), ("b", b), ("lam", lam), ("N_0", N_0), ("alpha", alpha)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    num = (gamma / (8.0 * epsilon_m)) ** (2.0 / L)
    den = 2.0 * b * (lam * N_0 ** (-alpha) + math.log(2.0 * b * L))
    return math.sqrt(num / den)


def perturbation_sigma(gamma, L, B, beta, b) -> float:
    """sigma threshold under which a Gaussian perturbation moves logits < gamma/8 w.p. > 1/2."""
    return gamma / (84.0 * L * B * beta ** (L - 1) * math.sqrt(b * math.log(4.0 * b * L)))


def sample_gaussian_model(dims, sigma, rng, center=None) -> MlpClassifier:
    layers = [sigma * rng.standard_normal((a, b)) for a, b in zip(dims[:-1], dims[1:])]
    if center is not None:
        layers = [c + u for c, u in zip(center.layers, layers)]
    return MlpClassifier(tuple(layers))


def sample_prior(spec: PriorSpec, seed: int) -> MlpClassifier:
    return sample_gaussian_model(spec.dims, spec.sigma, np.random.default_rng(seed))


def sample_posterior(spec: PosteriorSpec, seed: int) -> MlpClassifier:
    return sample_gaussian_model(spec.center.dims, spec.sigma, np.random.default_rng(seed), spec.center)


def _spectral_norms(model: MlpClassifier) -> np.ndarray:
    # LAPACK in MC loops; power iteration can stall on near-degenerate draws
    return np.array([np.linalg.norm(w, 2) for w in model.layers])


def kl_upper_bound(center: MlpClassifier, sigma: float) -> float:
    """sum_l ||W_l||_F^2 / (2 sigma^2), an upper bound on KL(Q||P)."""
    return sum(float(np.sum(w * w)) for w in center.layers) / (2.0 * sigma**2)


def spectral_tail_check(sigma, b, rows, cols, t, trials, seed) -> dict:
    """Empirical Pr(||W||_2 > t) for W with iid N(0, sigma^2) entries vs 2b exp(-t^2 / 2b sigma^2)."""
    if trials < 1000:
        raise ValueError("trials must be at least 1000")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    hits = 0
    for i in range(trials):
        w = sigma * np.random.default_rng(seed + i).standard_normal((rows, cols))
        hits += np.linalg.norm(w, 2) > t
    p = hits / trials
    analytic = 2.0 * b * math.exp(-(t**2) / (2.0 * b * sigma**2))
    se = math.sqrt(max(p * (1.0 - p), 1.0 / trials) / trials)
    return {
        "empirical_prob": p,
        "analytic_bound": analytic,
        "std_err": se,
        "consistent": bool(analytic > 1.0 or p <= analytic + 3.0 * se),
    }


def log_mean_exp(x) -> MCEstimate:
    """log(mean(exp(x))) with a delta-method standard error."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    m = x.max()
    w = np.exp(x - m)
    mean = w.mean()
    se = float(w.std(ddof=1) / (math.sqrt(n) * mean)) if n > 1 else float("nan")
    return MCEstimate(float(m + math.log(mean)), se, n)


# --------------------------------------------------------------------------
# closed forms


def theorem1_rhs(train_margin_loss, kl, lam, N_0, delta, discrepancy) -> float:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0, 1]")
    return train_margin_loss + (kl + math.log(1.0 / delta) + lam**2 / (4.0 * N_0) + discrepancy) / lam


def theorem2_rhs(train_margin_loss, kl, lam, N_0, delta, discrepancy_half_gamma) -> float:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0, 1]")
    return train_margin_loss + (
        2.0 * (kl + 1.0) + math.log(1.0 / delta) + lam**2 / (4.0 * N_0) + discrepancy_half_gamma
    ) / lam


def discrepancy_bound(lam, c, K, epsilon_m) -> float:
    """ln 3 + lam c K eps_m."""
    return LN3 + lam * c * K * epsilon_m


def covering_count(L, C, B, gamma) -> float:
    """Number of beta values needed: L C (2B)^(1/L) / gamma^(1/L)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive: the covering count is undefined at gamma = 0")
    return L * C * (2.0 * B) ** (1.0 / L) / gamma ** (1.0 / L)


# --------------------------------------------------------------------------
# Monte-Carlo estimates


def _loss_difference(model, Z_m, eta_m, gamma_m, Z_0, eta_0, gamma_0) -> float:
    lm = expected_margin_loss_from_logits(forward(model, Z_m), eta_m, gamma_m)
    l0 = expected_margin_loss_from_logits(forward(model, Z_0), eta_0, gamma_0)
    return lm - l0


def discrepancy_mc(prior: PriorSpec, Z_m, eta_m, Z_0, eta_0, gamma, lam, mc_samples, seed) -> MCEstimate:
    """ln E_{h~P} exp(lam (L_m^{gamma/2}(h) - L_0^{gamma}(h)))."""
    if mc_samples < 100:
        raise ValueError("mc_samples must be at least 100")
    eta_m = check_label_field(eta_m)
    eta_0 = check_label_field(eta_0)
    x = np.empty(mc_samples)
    for i in range(mc_samples):
        h = sample_prior(prior, seed + i)
        x[i] = lam * _loss_difference(h, Z_m, eta_m, gamma / 2.0, Z_0, eta_0, gamma)
    return log_mean_exp(x)


def posterior_margin_loss_mc(post: PosteriorSpec, Z_rows, labels, gamma, mc_samples, seed) -> MCEstimate:
    vals = np.array(
        [margin_loss_from_logits(forward(sample_posterior(post, seed + i), Z_rows), labels, gamma) for i in range(mc_samples)]
    )
    se = float(vals.std(ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else float("nan")
    return MCEstimate(float(vals.mean()), se, mc_samples)


def lemma_loss_diff_check(model, Z_m, eta_m, Z_0, eta_0, gamma, c, K, epsilon_m, T_h=None) -> dict:
    """Check L_m^{gamma/2}(h) - L_0^{gamma}(h) <= c K eps_m for a model with eps T_h^L <= gamma/4."""
    if T_h is None:
        T_h = float(_spectral_norms(model).max())
    L = model.depth
    if epsilon_m * T_h**L > gamma / 4.0:
        raise HypothesisNotMet(f"hypothesis not met: eps_m * T_h^L = {epsilon_m * T_h**L:.4g} > gamma/4")
    eta_m = check_label_field(eta_m)
    eta_0 = check_label_field(eta_0)
    lhs = _loss_difference(model, Z_m, eta_m, gamma / 2.0, Z_0, eta_0, gamma)
    rhs = c * K * epsilon_m
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs + 1e-9)}


def assumption3_check(prior: PriorSpec, world, cfg: BoundConfig, min_conditional=500, max_draws=200_000) -> dict:
    """Rejection-sampled Pr(L_m^{g/4} - L_0^{g/2} > N_0^-a + cK eps | T_h^L eps > g/8) vs exp(-N_0^{2a})."""
    if cfg.gamma is None:
        raise ValueError("assumption3_check needs an explicit gamma")
    gamma, alpha = cfg.gamma, cfg.alpha
    eps = world.epsilon_m
    c = cfg.c if cfg.c is not None else world.eta.lipschitz_c
    K = world.bundle.num_classes
    N_0 = len(world.V_0)
    Z = world.Z.Z
    Z_0, Z_m = Z[world.V_0], Z[world.V_m]
    eta = world.eta.eta
    eta_0, eta_m = eta[world.V_0], eta[world.V_m]
    margin = N_0 ** (-alpha) + c * K * eps
    L = prior.depth

    n_cond = 0
    n_exceed = 0
    draws = 0
    while n_cond < min_conditional and draws < max_draws:
        h = sample_prior(prior, cfg.seed + draws)
        draws += 1
        if _spectral_norms(h).max() ** L * eps <= gamma / 8.0:
            continue
        n_cond += 1
        n_exceed += _loss_difference(h, Z_m, eta_m, gamma / 4.0, Z_0, eta_0, gamma / 2.0) > margin
    threshold = math.exp(-(N_0 ** (2 * alpha)))
    out = {
        "draws": draws,
        "conditional_draws": n_cond,
        "conditioning_mass": n_cond / draws,
        "threshold": threshold,
        "conditional_prob_estimate": None,
        "plausible": None,
        "status": "ok",
    }
    if n_cond == 0:
        raise InsufficientConditioningMass("conditioning event never sampled")
    p = n_exceed / n_cond
    out["conditional_prob_estimate"] = p
    if n_cond < min_conditional:
        out["status"] = "insufficient conditioning mass"
        return out
    se = math.sqrt(p * (1 - p) / n_cond)
    out["plausible"] = bool(p <= threshold + 3 * se)
    return out


def perturbation_half_check(center: MlpClassifier, sigma, Z_rows, gamma, trials, seed) -> dict:
    """Pr(max_i ||f(z_i; W) - f(z_i; W + U)||_inf < gamma/8) for U ~ N(0, sigma^2 I)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    Z_rows = np.asarray(Z_rows, dtype=np.float64)
    norms = weight_norms(center)
    L, b = center.depth, center.max_width
    B = float(np.linalg.norm(Z_rows, axis=1).max())
    threshold = perturbation_sigma(gamma, L, B, norms.beta_tilde, b)
    if sigma is None:
        sigma = threshold
    if sigma > threshold * (1 + 1e-12):
        raise ValueError(f"sigma {sigma:.4g} exceeds the lemma threshold {threshold:.4g}")
    base = forward(center, Z_rows)
    post = PosteriorSpec(center, sigma)
    hits = 0
    for i in range(trials):
        out = forward(sample_posterior(post, seed + i), Z_rows)
        hits += np.abs(out - base).max() < gamma / 8.0
    p = hits / trials
    return {
        "prob_estimate": p,
        "std_err": math.sqrt(max(p * (1 - p), 1.0 / trials) / trials),
        "sigma": sigma,
        "sigma_threshold": threshold,
    }


# --------------------------------------------------------------------------
# binary linear case: loss difference table


def _a5_table(dz, dze, gamma, eta1, eta2):
    dz, dze = np.asarray(dz, dtype=float), np.asarray(dze, dtype=float)
    col = np.where(dz > gamma / 2, 0, np.where(dz < -gamma / 2, 1, 2))
    row = np.where(dze > gamma / 4, 0, np.where(dze < -gamma / 4, 1, 2))
    eta1 = np.broadcast_to(eta1, dz.shape)
    eta2 = np.broadcast_to(eta2, dz.shape)
    zero = np.zeros(dz.shape)
    table = np.stack(
        [
            np.stack([zero, eta2 - eta1, -eta1]),
            np.stack([eta1 - eta2, zero, -eta2]),
            np.stack([eta1, eta2, zero]),
        ]
    )
    flat = table.reshape(9, -1)
    return flat[(row * 3 + col).ravel(), np.arange(flat.shape[1])].reshape(dz.shape)


def a5_loss_diff_term(delta_z, delta_z_plus_eps, gamma, eta1, eta2) -> float:
    """Loss-difference term for one node given Delta_Z and Delta_Z + Delta_eps.

    Boundary values belong to the middle bands.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not (0 <= eta1 <= 1 and 0 <= eta2 <= 1) or abs(eta1 + eta2 - 1) > 1e-9:
        raise ValueError("eta1, eta2 must form a distribution")
    return float(_a5_table(delta_z, delta_z_plus_eps, gamma, eta1, eta2))


def a5_positive_area_mc(Z_0, eps, eta, gamma, sigma, trials, seed, c=0.0, alpha=0.2) -> dict:
    """Average table value over Delta_W ~ N(0, 2 sigma^2 I).

    ``eta`` is the (N_0, 2) label field at the test rows ``Z_0 + eps``.
    """
    Z_0 = np.asarray(Z_0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    eta = check_label_field(eta)
    if eta.shape[1] != 2:
        raise ValueError("the table applies to binary problems only (K = 2)")
    if Z_0.shape != eps.shape or eta.shape[0] != Z_0.shape[0]:
        raise ValueError("shape mismatch")
    n0, d = Z_0.shape
    eps_m = float(np.linalg.norm(eps, axis=1).max())
    threshold = c * 2 * eps_m + n0 ** (-alpha)
    vals = np.empty(trials)
    for t in range(trials):
        dw = math.sqrt(2.0) * sigma * np.random.default_rng(seed + t).standard_normal(d)
        dz = Z_0 @ dw
        vals[t] = _a5_table(dz, dz + eps @ dw, gamma, eta[:, 0], eta[:, 1]).mean()
    return {
        "mean_loss_diff": float(vals.mean()),
        "std_err": float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan"),
        "frac_positive_draws": float((vals > threshold).mean()),
        "threshold": threshold,
    }


# --------------------------------------------------------------------------
# the full report


@dataclass
class BoundReport:
    group: int | None
    trial: int | None
    N_0: int
    N_m: int
    K: int
    L: int
    b: int
    gamma: float
    gamma_source: str
    alpha: float
    lam: float
    delta: float
    c: float
    c_assumed: bool
    epsilon_m: float
    s_m: int | None
    assumption2_holds: bool
    B_m: float
    covering_feature_bound: float
    C: float
    T_h: float
    beta_tilde: float
    sigma: float
    sigma_fallback: bool
    sigma_perturbation: float
    perturbation_sigma_binding: bool
    train_margin_loss: float
    kl_upper_bound: float
    discrepancy_bound: float
    theorem3_single_beta_rhs: float
    covering_count: float
    theorem3_covered_rhs: float
    observed_test_risk: float
    expected_test_risk: float | None
    eta_substituted: bool
    discrepancy_estimate: float | None = None
    discrepancy_std_err: float | None = None
    discrepancy_full_gamma_estimate: float | None = None
    posterior_train_margin_loss: float | None = None
    theorem1_rhs: float | None = None
    theorem2_rhs: float | None = None
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and not math.isfinite(v):
                out[k] = None
        return out


def default_gamma(model, Z0, y0) -> float:
    return max(float(np.median(margins(model, Z0, y0))), 0.1)


def theorem3_concrete(
    model: MlpClassifier,
    Z,
    labels,
    train,
    test,
    cfg: BoundConfig,
    eta=None,
    feature_bound: float | None = None,
    group: int | None = None,
) -> BoundReport:
    """All quantities of the subgroup bound for ``model`` on test set ``test``.

    ``eta`` is the true label field when known (synthetic data); otherwise the
    observed labels are used as point masses and the report is flagged.
    ``feature_bound`` overrides the max feature norm used in the covering
    count; it must be at least B_m.
    """
    Z = np.asarray(getattr(Z, "Z", Z), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    train = np.sort(np.asarray(train, dtype=np.int64))
    test = np.sort(np.asarray(test, dtype=np.int64))
    K = cfg.K or model.num_classes
    flags = []

    if cfg.c is None:
        raise ValueError("c (Lipschitz constant of the label field) must be supplied")
    eta_substituted = eta is None
    if eta_substituted:
        eta = np.eye(K)[labels]
        flags.append("eta_substituted_by_point_masses")
    eta = check_label_field(eta)

    Z0, Zm = Z[train], Z[test]
    y0, ym = labels[train], labels[test]
    N_0, N_m = train.size, test.size
    L, b = model.depth, model.max_width

    if cfg.gamma is None:
        gamma, gamma_source = default_gamma(model, Z0, y0), "median_train_margin"
    else:
        gamma, gamma_source = float(cfg.gamma), "user"
    alpha = cfg.alpha
    lam = cfg.lam if cfg.lam is not None else N_0 ** (2 * alpha)
    if lam > N_0 ** (2 * alpha) * (1 + 1e-12):
        flags.append("lambda_exceeds_N0^(2alpha)")

    ns = build_near_sets(Z, train, test)
    eps = ns.epsilon_m
    B_m = float(np.linalg.norm(np.concatenate([Z0, Zm]), axis=1).max())
    B_cover = B_m if feature_bound is None else float(feature_bound)
    if B_cover < B_m * (1 - 1e-12):
        raise ValueError("feature_bound must be at least B_m")

    norms = weight_norms(model)
    try:
        sigma = prior_sigma(gamma, eps, L, b, lam, N_0, alpha)
        fallback = False
    except DegenerateDistance:
        sigma, fallback = 1.0, True
        flags.append("epsilon_zero_sigma_fallback")
    sigma_pert = perturbation_sigma(gamma, L, max(B_m, 1e-300), norms.beta_tilde, b) if norms.beta_tilde > 0 else math.inf
    if sigma_pert < sigma:
        flags.append("perturbation_sigma_smaller_than_prior_sigma")

    train_loss = margin_loss_from_logits(forward(model, Z0), y0, gamma)
    kl = kl_upper_bound(model, sigma)
    dbound = discrepancy_bound(lam, cfg.c, K, eps)
    single = theorem2_rhs(train_loss, kl, lam, N_0, cfg.delta, dbound)
    count = covering_count(L, norms.C, B_cover, gamma)
    covered = theorem2_rhs(train_loss, kl, lam, N_0, cfg.delta / max(1.0, math.ceil(count)), dbound)

    logits_m = forward(model, Zm)
    observed = margin_loss_from_logits(logits_m, ym, 0.0)
    expected = None if eta_substituted else expected_margin_loss_from_logits(logits_m, eta[test], 0.0)

    report = BoundReport(
        group=group,
        trial=None,
        N_0=N_0,
        N_m=N_m,
        K=K,
        L=L,
        b=b,
        gamma=gamma,
        gamma_source=gamma_source,
        alpha=alpha,
        lam=lam,
        delta=cfg.delta,
        c=float(cfg.c),
        c_assumed=eta_substituted,
        epsilon_m=eps,
        s_m=ns.s_m,
        assumption2_holds=ns.assumption2_holds,
        B_m=B_m,
        covering_feature_bound=B_cover,
        C=norms.C,
        T_h=norms.T_h,
        beta_tilde=norms.beta_tilde,
        sigma=sigma,
        sigma_fallback=fallback,
        sigma_perturbation=sigma_pert,
        perturbation_sigma_binding=bool(sigma_pert < sigma),
        train_margin_loss=train_loss,
        kl_upper_bound=kl,
        discrepancy_bound=dbound,
        theorem3_single_beta_rhs=single,
        covering_count=count,
        theorem3_covered_rhs=covered,
        observed_test_risk=observed,
        expected_test_risk=expected,
        eta_substituted=eta_substituted,
        flags=flags,
    )

    if cfg.mc_samples:
        prior = PriorSpec(sigma, model.dims)
        half = discrepancy_mc(prior, Zm, eta[test], Z0, eta[train], gamma / 2.0, lam, cfg.mc_samples, cfg.seed)
        full = discrepancy_mc(prior, Zm, eta[test], Z0, eta[train], gamma, lam, cfg.mc_samples, cfg.seed)
        post = posterior_margin_loss_mc(PosteriorSpec(model, sigma), Z0, y0, gamma, cfg.mc_samples, cfg.seed)
        report.discrepancy_estimate = half.estimate
        report.discrepancy_std_err = half.std_err
        report.discrepancy_full_gamma_estimate = full.estimate
        report.posterior_train_margin_loss = post.estimate
        report.theorem2_rhs = theorem2_rhs(train_loss, kl, lam, N_0, cfg.delta, half.estimate)
        report.theorem1_rhs = theorem1_rhs(post.estimate, kl, lam, N_0, cfg.delta, full.estimate)
    return report
