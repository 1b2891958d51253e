from dataclasses import asdict, dataclass


@dataclass
class EvalCounters:
    """Evaluation counters owned by one sampler run.

    ``target_density_evals`` and ``proposal_evals`` are the two quantities of
    the complexity table: fresh calls to log pi, and single-proposal pdf
    evaluations made while weighting samples (a mixture over N proposals
    counts N). Everything else is bookkeeping that keeps those two honest.
    """

    target_density_evals: int = 0
    target_gradient_evals: int = 0
    proposal_evals: int = 0
    # log pi values from sample weighting, reused at preliminary locations drawn from samples
    cached_density_hits: int = 0
    # proposal pdfs evaluated while weighting preliminary locations
    adaptation_proposal_evals: int = 0
    # Gaussian kernel evaluations of the cooperation mixture
    kernel_evals: int = 0
    # one-off chain initialisation
    setup_density_evals: int = 0
    setup_gradient_evals: int = 0

    def snapshot(self) -> "EvalCounters":
        return EvalCounters(**asdict(self))

    def table_equivalent_density_evals(self) -> int:
        """Fresh per-iteration density calls plus cache hits at sample-derived locations."""
        return self.target_density_evals + self.cached_density_hits

    def as_dict(self) -> dict[str, int]:
        return asdict(self)
