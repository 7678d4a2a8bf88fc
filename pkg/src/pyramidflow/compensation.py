"""Progressive multi-step motion compensation at inference time.

A first flow estimate warps the source toward the target; the model is then
re-run on the (intermediate, target) pair and the residual flow is composed
with the previous estimate. Two steps are the default; one step is the plain
single-pass model.
"""

from .grid import compose_flows, warp
from .network import ModelParams, forward


def progressive_flow(params: ModelParams, source, target, steps=2):
    """Estimate the source->target flow with ``steps`` compensation passes.

    Returns (flow, intermediates) where ``intermediates`` holds the warped
    image produced before each re-estimation pass (empty for steps=1). For
    steps=1 the returned flow is exactly the single forward pass output.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    flow = forward(params, source, target).refined_flow
    intermediates = []
    for _ in range(steps - 1):
        intermediate = warp(source, flow)
        intermediates.append(intermediate)
        residual = forward(params, intermediate, target).refined_flow
        flow = compose_flows(inner=flow, outer=residual)
    return flow, intermediates
