"""Find the circular fundus region of one frame with the genetic ellipse fit.

Otsu separates the lit aperture from the black surround, the largest
component's contour gives edge pixels, and the GA searches five-point
conics that put most circumference samples on those edges.
"""
from retmosaic import imgcore, phantom
from retmosaic.roi import GaConfig, canonical_from_conic, fit_ellipse_ga

frames, truth = phantom.generate(phantom.PhantomConfig(frame_count=3, seed=2))
frame, true_ellipse = frames[1], truth.rois[1]

gray = imgcore.to_grayscale(frame)
threshold = imgcore.otsu_threshold(gray)
edges = imgcore.contour(imgcore.largest_component(imgcore.binarize(gray, threshold)))
print(f"Otsu threshold {threshold}, {edges.sum()} edge pixels")

history = []
conic, fit = fit_ellipse_ga(edges, GaConfig(seed=0), history=history)
found = canonical_from_conic(conic)
for gen in (0, 10, 50, len(history) - 1):
    print(f"generation {gen:3d}: best fitness {history[gen]:.3f}")

print(f"true  centre ({true_ellipse.x0:.1f}, {true_ellipse.y0:.1f}) "
      f"axes {true_ellipse.a:.1f} x {true_ellipse.b:.1f}")
print(f"found centre ({found.x0:.1f}, {found.y0:.1f}) axes {found.a:.1f} x {found.b:.1f}")
