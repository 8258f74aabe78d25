"""Register one frame onto its neighbour through their vesselness maps.

Colour and brightness differ between frames, so matching runs on the
Frangi response of the green channel. The search scans translations at
the coarsest pyramid level with a masked FFT correlation, refines down
the pyramid, and accepts the result only when it beats the best distinct
competitor by the margin factor.
"""
import numpy as np

from retmosaic import phantom, pipeline
from retmosaic.registration import register

frames, truth = phantom.generate(phantom.PhantomConfig(
    frame_count=2, seed=4, trajectory=[(300.0, 320.0, 1.0), (335.0, 300.0, 1.03)]))
a, b = (pipeline.analyze_frame(f) for f in frames)
print(f"vesselness entropy: frame 0 {a.entropy:.2f}, frame 1 {b.entropy:.2f}")

res = register(b.vessels, a.vessels)
true = truth.transforms[0].inverse().compose(truth.transforms[1])
c = (frames[1].shape[1] - 1) / 2
err = np.hypot(*np.subtract(res.transform.apply(c, c), true.apply(c, c)))
print(f"estimated scale {res.transform.scale:.4f} t=({res.transform.tx:.2f}, "
      f"{res.transform.ty:.2f})")
print(f"true      scale {true.scale:.4f} t=({true.tx:.2f}, {true.ty:.2f})")
print(f"frame centre error {err:.2f} px")
print(f"NCC {res.score:.3f} vs competitor {res.second_score:.3f}: "
      f"{'accepted' if res.accepted else 'rejected'}")
