import numpy as np
import pytest
from scipy import ndimage

from retmosaic import imgcore
from retmosaic.errors import InvalidConfig
from retmosaic.phantom import PhantomConfig, generate, rim_profile, serpentine
from retmosaic.pipeline import fill_invalid
from retmosaic.roi import conic_from_canonical, fitness
from retmosaic.vesselness import entropy_score, vesselness

SMALL = dict(retina_size=400, frame_size=128, roi_radius_range=(48.0, 58.0),
             frame_count=5, vessel_branches=4)


def small(**kw):
    return PhantomConfig(**{**SMALL, **kw})


def test_config_validation():
    for bad in (dict(frame_size=400), dict(frame_size=8), dict(frame_count=-1),
                dict(roi_radius_range=(60.0, 50.0)), dict(noise_sigma=-1),
                dict(trajectory=[(200.0, 200.0, 1.0)]), dict(rim_brightness=0)):
        with pytest.raises(InvalidConfig):
            small(**bad)


def test_deterministic():
    f1, t1 = generate(small(seed=9))
    f2, t2 = generate(small(seed=9))
    for a, b in zip(f1, f2):
        np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(t1.retina.rgb, t2.retina.rgb)
    np.testing.assert_array_equal(t1.vessel_mask, t2.vessel_mask)
    assert t1.rois == t2.rois and t1.transforms == t2.transforms
    for a, b in zip(t1.glare_masks, t2.glare_masks):
        np.testing.assert_array_equal(a, b)
    f3, _ = generate(small(seed=10))
    assert not np.array_equal(f1[0].rgb, f3[0].rgb)


def test_ground_truth_lengths():
    frames, truth = generate(small())
    n = len(frames)
    assert n == 5 and len(truth.rois) == n and len(truth.transforms) == n
    assert len(truth.glare_masks) == n
    assert frames[0].shape == (128, 128)
    assert [f.index for f in frames] == list(range(n))


def test_no_glare_noise_or_blur_gives_empty_masks():
    _, truth = generate(small(glare_blob_count=0, noise_sigma=0.0))
    assert not any(m.any() for m in truth.glare_masks)


def test_glare_pixels_saturated_before_noise():
    frames, truth = generate(small(noise_sigma=0.0, glare_blob_count=2))
    assert any(m.any() for m in truth.glare_masks)
    for f, m in zip(frames, truth.glare_masks):
        assert (f.rgb[m] == 255).all()


def _frame_entropies(frames, truth):
    out = []
    for i, f in enumerate(frames):
        valid = truth.roi_mask(i) & ~truth.glare_masks[i]
        out.append(entropy_score(vesselness(fill_invalid(f.green, valid), valid)))
    return out


def test_vessel_free_phantom_has_lower_entropy():
    plain_frames, plain = generate(small(vessel_branches=0))
    rich_frames, rich = generate(small())
    assert not plain.vessel_mask.any() and rich.vessel_mask.any()
    assert max(_frame_entropies(plain_frames, plain)) < \
        min(_frame_entropies(rich_frames, rich))


def _true_roi_fitness(config):
    frames, truth = generate(config)
    out = []
    for f, e in zip(frames, truth.rois):
        gray = imgcore.to_grayscale(f)
        blob = imgcore.largest_component(imgcore.binarize(gray, imgcore.otsu_threshold(gray)))
        out.append(fitness(conic_from_canonical(e), imgcore.contour(blob)))
    return np.array(out)


def test_true_roi_scores_high_fitness():
    # the aperture darkens to 0.45 at the rim, close to the Otsu threshold,
    # so the extracted contour can sit a few pixels inside the true ellipse
    scores = _true_roi_fitness(PhantomConfig(frame_count=12))
    assert scores.min() >= 0.9, np.round(scores, 3)


def test_true_roi_fitness_without_rim_darkening():
    scores = _true_roi_fitness(PhantomConfig(frame_count=12, rim_brightness=1.0))
    assert scores.min() >= 0.9


def test_true_transforms_compose_consistently():
    _, truth = generate(small())
    t = truth.transforms

    def rel(i, j):      # frame j -> frame i
        return t[i].inverse().compose(t[j])

    for i, j, k in [(0, 1, 2), (1, 3, 4), (0, 2, 4)]:
        direct, chained = rel(i, k), rel(i, j).compose(rel(j, k))
        assert abs(direct.scale - chained.scale) <= 1e-9
        assert abs(direct.tx - chained.tx) <= 1e-9 and abs(direct.ty - chained.ty) <= 1e-9


def test_transforms_follow_trajectory():
    traj = [(200.0, 190.0, 1.0), (230.0, 195.0, 1.05)]
    _, truth = generate(small(frame_count=2, trajectory=traj))
    mid = 63.5
    for (cx, cy, zoom), t in zip(traj, truth.transforms):
        assert t.apply(mid, mid) == pytest.approx((cx, cy))
        assert t.scale == pytest.approx(1 / zoom)


def test_serpentine_path():
    path = serpentine(30, 640, 224)
    assert len(path) == 30 and serpentine(0, 640, 224) == []
    xs, ys, zs = np.array(path).T
    assert xs.min() >= 112 and xs.max() <= 640 - 112
    assert np.all(np.abs(zs - 1) <= 0.03 + 1e-12)
    # equal arc-length steps; chords across the turns are shorter
    steps = np.hypot(np.diff(xs), np.diff(ys))
    assert np.median(steps) == pytest.approx(steps.max())
    assert np.mean(np.isclose(steps, steps.max())) > 0.8


def test_rim_profile():
    assert rim_profile(0.0) == pytest.approx(1.0)
    assert rim_profile(1.0) == pytest.approx(0.45)
    assert rim_profile(2.0) == pytest.approx(0.45)
    r = np.linspace(0, 1, 50)
    assert (np.diff(rim_profile(r)) <= 0).all()
    assert rim_profile(0.5, rim_brightness=1.0) == 1.0


def test_outside_roi_is_dark():
    frames, truth = generate(small(noise_sigma=0.0))
    for i, f in enumerate(frames):
        far = ~ndimage.binary_dilation(truth.roi_mask(i), iterations=3)
        assert f.rgb[far].max() <= 12
