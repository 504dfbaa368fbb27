from dataclasses import dataclass

TILE = 16


@dataclass(frozen=True)
class RenderSettings:
    """Rasterizer constants.

    Setting ``skip_alpha`` or ``stop_transmittance`` to 0 disables the
    corresponding shortcut, which the exact-equivalence and gradient checks
    rely on.
    """

    alpha_cap: float = 0.99
    skip_alpha: float = 1.0 / 255.0
    stop_transmittance: float = 1e-4
    dilation: float = 0.3
    sh_degree: int = 3
    deterministic: bool = True
    # smallest alpha' still worth binning when skipping is disabled
    exact_floor: float = 1e-7

    @property
    def contribution_floor(self):
        return self.skip_alpha if self.skip_alpha > 0 else self.exact_floor

    def exact(self):
        """Copy with both shortcuts disabled."""
        from dataclasses import replace

        return replace(self, skip_alpha=0.0, stop_transmittance=0.0)
