"""Seeded synthetic suites of domain-shifted MIL episodes.

Instances are built in a canonical frame around a shared background mean b:
background draws are b + N(0, noise^2 I) and, in positive bags, witness draws
add signal * u.  Domain t rotates the canonical (background, witness) pair by
angle(t) in the plane of u and a random direction v_t, about the midpoint of
the pair, and then moves the whole domain by shift along a random direction
orthogonal to that plane.  Domain 1 is left in the canonical frame.

Past 90 degrees a later domain's negatives sit near the place where domain 1
put its witnesses, so learning the later domain pulls the classifier's
response to u down.  The rotation stays below 180 degrees, so one linear
read-out of bag means can still rank every domain at once.
"""
import numpy as np
from scipy.stats import ortho_group

from aglrtk.core import EpisodeDataset, FeatureBag, round_half_up

# signal rotation of the last domain at mix = 1
MAX_ROTATION = 0.75 * np.pi

class SyntheticDomainSpec(object):
    """train_bags / test_bags count bags per class per domain; mix in [0, 1]
    scales the signal rotation (1 turns the last domain's signal direction
    135 degrees away from the first's)"""
    def __init__(self, dim=32, domains=3, train_bags=40, test_bags=10, bag_size=(50, 200), witness_rate=0.2,
                 noise=1.0, signal=3.0, shift=2.0, mix=1.0, name="synthetic"):
        self.dim = int(dim)
        self.domains = int(domains)
        self.train_bags = int(train_bags)
        self.test_bags = int(test_bags)
        self.bag_size = (int(bag_size[0]), int(bag_size[1]))
        self.witness_rate = float(witness_rate)
        self.noise = float(noise)
        self.signal = float(signal)
        self.shift = float(shift)
        self.mix = float(mix)
        self.name = str(name)

        if self.dim < 2:
            raise ValueError("synthetic dim {} < 2".format(self.dim))
        if self.domains < 1:
            raise ValueError("synthetic domains {} < 1".format(self.domains))
        if self.train_bags < 1 or self.test_bags < 0:
            raise ValueError("need train_bags >= 1 and test_bags >= 0, got {} {}".format(self.train_bags, self.test_bags))
        if self.bag_size[0] < 1 or self.bag_size[1] < self.bag_size[0]:
            raise ValueError("bad bag_size range {}".format(self.bag_size))
        if not (0.0 < self.witness_rate <= 1.0):
            raise ValueError("witness_rate {} not in (0, 1]".format(self.witness_rate))
        if self.noise < 0.0:
            raise ValueError("noise {} < 0".format(self.noise))
        if not (0.0 <= self.mix <= 1.0):
            raise ValueError("mix {} not in [0, 1]".format(self.mix))

    def rotation_angle(self, t):
        if self.domains == 1:
            return 0.0
        return self.mix * MAX_ROTATION * (t - 1) / float(self.domains - 1)

    def __repr__(self):
        return ("SyntheticDomainSpec({}, dim={}, domains={}, bags={}+{}, bag_size={}, witness_rate={}, "
                "noise={}, signal={}, shift={}, mix={})").format(self.name, self.dim, self.domains, self.train_bags,
                self.test_bags, self.bag_size, self.witness_rate, self.noise, self.signal, self.shift, self.mix)

def _random_orthonormal(dim, rng):
    return ortho_group.rvs(dim, random_state=rng.generator)

def _orthogonal_part(x, basis):
    for e in basis:
        x = x - np.dot(x, e) * e
    return x

def _domain_transform(spec, t, u, rng):
    """(R, offset) for domain t: canonical instance c maps to b + R c + offset"""
    if t == 1:
        return (np.eye(spec.dim), np.zeros(spec.dim))
    Q = _random_orthonormal(spec.dim, rng.child("rotation"))
    v = _orthogonal_part(Q[:, 0], [u])
    v /= np.linalg.norm(v)
    theta = spec.rotation_angle(t)
    # R = I + (cos - 1)(u u^T + v v^T) + sin (v u^T - u v^T)
    R = (np.eye(spec.dim) + (np.cos(theta) - 1.0) * (np.outer(u, u) + np.outer(v, v)) +
         np.sin(theta) * (np.outer(v, u) - np.outer(u, v)))
    # pivot on the background/witness midpoint
    midpoint = 0.5 * spec.signal * u
    offset = midpoint - np.dot(R, midpoint)
    if spec.dim > 2:
        direction = _orthogonal_part(rng.child("shift").standard_normal(spec.dim), [u, v])
        offset += spec.shift * direction / np.linalg.norm(direction)
    return (R, offset)

def n_witnesses(spec, n):
    return min(n, max(1, round_half_up(spec.witness_rate * n)))

def _make_bag(spec, bag_id, t, label, background, u, R, offset, rng):
    n = int(rng.integers(spec.bag_size[0], spec.bag_size[1] + 1))
    C = spec.noise * rng.standard_normal((n, spec.dim))
    if label == 1:
        C[:n_witnesses(spec, n)] += spec.signal * u
        C = C[rng.permutation(n)]
    X = background + C.dot(R.T) + offset
    return FeatureBag(bag_id, t, label, X.astype(np.float32))

def generate_suite(spec, rng):
    """list of EpisodeDataset, one per domain, each bag on its own labelled stream"""
    background = rng.child("background").standard_normal(spec.dim)
    u = signal_direction(spec, rng)

    episodes = []
    for t in range(1, spec.domains + 1):
        d_rng = rng.child("domain{}".format(t))
        (R, offset) = _domain_transform(spec, t, u, d_rng)
        train = []
        test = []
        for label in (0, 1):
            for j in range(spec.train_bags + spec.test_bags):
                split = "train" if j < spec.train_bags else "test"
                bag_id = "{}_d{}_{}_c{}_{:03d}".format(spec.name, t, split, label, j)
                bag = _make_bag(spec, bag_id, t, label, background, u, R, offset, d_rng.child(bag_id))
                (train if split == "train" else test).append(bag)
        episodes.append(EpisodeDataset(t, train, test))
    return episodes

def signal_direction(spec, rng):
    """unit signal direction of domain 1, drawn exactly as generate_suite draws it"""
    u = rng.child("signal").standard_normal(spec.dim)
    return u / np.linalg.norm(u)
