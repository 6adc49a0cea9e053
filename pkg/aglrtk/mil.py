"""Attention-based MIL classifier with hand-written gradients.

    h_i    = relu(W_proj^T f_i + b_proj)                          (d)
    s_i    = w_att^T tanh(V_att^T h_i + b_att)                    (scalar)
             (gated: w_att^T [tanh(V^T h + b) * sigmoid(U^T h + c)])
    a      = softmax(s)                                           (n)
    z      = sum_i a_i h_i                                        (d)
    logits = W_head^T z + b_head                                  (2)
"""
import numpy as np

from aglrtk.core import DimensionMismatch, NonFiniteValue, RngStream, split_by_class, softmax
from scipy.special import logsumexp, expit

class SingleClassDataset(ValueError):
    pass

PARAM_SHAPES = [ ("W_proj", ("D", "d")), ("b_proj", ("d",)),
                 ("V_att", ("d", "L")), ("b_att", ("L",)), ("w_att", ("L",)),
                 ("W_head", ("d", 2)), ("b_head", (2,)) ]
GATE_SHAPES = [ ("U_gate", ("d", "L")), ("b_gate", ("L",)) ]

class MilParams(object):
    """named parameter arrays of the classifier; also used for gradients and optimizer moments"""
    def __init__(self, arrays, gated=False):
        self.arrays = dict((k, np.array(v)) for (k, v) in arrays.items())
        self.gated = bool(gated)

    @classmethod
    def init(cls, D, d=128, L=64, rng=None, gated=False, dtype=np.float32):
        """Glorot-uniform weights, zero biases"""
        if rng is None:
            rng = RngStream(0, "mil_init")
        sizes = {"D" : D, "d" : d, "L" : L}
        arrays = {}
        for (name, shape) in PARAM_SHAPES + (GATE_SHAPES if gated else []):
            shape = tuple(sizes.get(s, s) for s in shape)
            if name.startswith("b_"):
                arrays[name] = np.zeros(shape)
            else:
                fan_in = shape[0]
                fan_out = shape[1] if len(shape) > 1 else 1
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                arrays[name] = rng.generator.uniform(-limit, limit, size=shape)
        return cls(dict((k, v.astype(dtype)) for (k, v) in arrays.items()), gated=gated)

    def __getitem__(self, key):
        return self.arrays[key]

    def names(self):
        return [n for (n, _) in PARAM_SHAPES + (GATE_SHAPES if self.gated else [])]

    @property
    def dtype(self):
        return self.arrays["W_proj"].dtype

    @property
    def input_dim(self):
        return self.arrays["W_proj"].shape[0]

    def copy(self):
        return MilParams(dict((k, v.copy()) for (k, v) in self.arrays.items()), gated=self.gated)

    def zeros_like(self):
        return MilParams(dict((k, np.zeros_like(v)) for (k, v) in self.arrays.items()), gated=self.gated)

    def astype(self, dtype):
        return MilParams(dict((k, v.astype(dtype)) for (k, v) in self.arrays.items()), gated=self.gated)

    def flatten(self):
        return np.concatenate([self.arrays[n].ravel() for n in self.names()])

    def unflatten(self, theta):
        arrays = {}
        i = 0
        for n in self.names():
            size = self.arrays[n].size
            arrays[n] = np.asarray(theta[i:i+size], dtype=self.dtype).reshape(self.arrays[n].shape)
            i += size
        return MilParams(arrays, gated=self.gated)

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def equals(self, other):
        return (self.gated == other.gated and set(self.arrays) == set(other.arrays) and
                all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays))

class TrainConfig(object):
    def __init__(self, epochs=20, learning_rate=1.0e-4, beta1=0.9, beta2=0.999, eps=1.0e-8, weight_decay=1.0e-5,
                 class_weighting=True, embed_dim=128, attention_dim=64, gated=False, dtype="float32"):
        if epochs < 1:
            raise ValueError("epochs {} < 1".format(epochs))
        if not learning_rate > 0.0:
            raise ValueError("learning_rate {} must be > 0".format(learning_rate))
        if weight_decay < 0.0:
            raise ValueError("weight_decay {} must be >= 0".format(weight_decay))
        self.epochs = int(epochs)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.class_weighting = bool(class_weighting)
        self.embed_dim = int(embed_dim)
        self.attention_dim = int(attention_dim)
        self.gated = bool(gated)
        self.dtype = np.dtype(dtype)

    def __repr__(self):
        return ("TrainConfig(epochs={}, learning_rate={}, weight_decay={}, class_weighting={}, embed_dim={}, "
                "attention_dim={}, gated={}, dtype={})").format(self.epochs, self.learning_rate, self.weight_decay,
                self.class_weighting, self.embed_dim, self.attention_dim, self.gated, self.dtype.name)

################################################################################

def _forward(X, params):
    p = params.arrays
    pre_h = np.dot(X, p["W_proj"]) + p["b_proj"]
    H = np.maximum(pre_h, 0)
    T = np.tanh(np.dot(H, p["V_att"]) + p["b_att"])
    if params.gated:
        G = expit(np.dot(H, p["U_gate"]) + p["b_gate"])
        A = T * G
    else:
        G = None
        A = T
    s = np.dot(A, p["w_att"])
    a = softmax(s)
    z = np.dot(a, H)
    logits = np.dot(z, p["W_head"]) + p["b_head"]
    return { "X" : X, "pre_h" : pre_h, "H" : H, "T" : T, "G" : G, "A" : A, "a" : a, "z" : z, "logits" : logits }

def _bag_matrix(bag, params):
    X = bag.embeddings
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionMismatch("bag '{}' has D={}, classifier expects {}".format(
            bag.bag_id, X.shape[1] if X.ndim == 2 else None, params.input_dim))
    return np.asarray(X, dtype=params.dtype)

def forward(bag, params):
    cache = _forward(_bag_matrix(bag, params), params)
    return (cache["logits"], cache["a"], cache["z"])

def loss_and_grads(bag, label, params, class_weights=(1.0, 1.0)):
    cache = _forward(_bag_matrix(bag, params), params)
    p = params.arrays
    cw = class_weights[label]
    logits = cache["logits"]
    loss = cw * (logsumexp(logits) - logits[label])

    # head: dL/dlogits = cw * (softmax - onehot)
    dlogits = cw * softmax(logits)
    dlogits[label] -= cw
    grads = {}
    grads["W_head"] = np.outer(cache["z"], dlogits)
    grads["b_head"] = dlogits
    dz = np.dot(p["W_head"], dlogits)

    # pooling z = a^T H
    H = cache["H"]
    a = cache["a"]
    da = np.dot(H, dz)
    dH = np.outer(a, dz)

    # softmax over instances
    ds = a * (da - np.dot(a, da))

    # attention scorer
    grads["w_att"] = np.dot(cache["A"].T, ds)
    dA = np.outer(ds, p["w_att"])
    T = cache["T"]
    if params.gated:
        G = cache["G"]
        dpre_t = dA * G * (1.0 - T**2)
        dpre_g = dA * T * G * (1.0 - G)
        grads["U_gate"] = np.dot(H.T, dpre_g)
        grads["b_gate"] = np.sum(dpre_g, axis=0)
        dH += np.dot(dpre_g, p["U_gate"].T)
    else:
        dpre_t = dA * (1.0 - T**2)
    grads["V_att"] = np.dot(H.T, dpre_t)
    grads["b_att"] = np.sum(dpre_t, axis=0)
    dH += np.dot(dpre_t, p["V_att"].T)

    # projection
    dpre_h = dH * (cache["pre_h"] > 0)
    grads["W_proj"] = np.dot(cache["X"].T, dpre_h)
    grads["b_proj"] = np.sum(dpre_h, axis=0)

    return (float(loss), MilParams(grads, gated=params.gated))

def class_weights_for(bags, class_weighting=True):
    """inverse class frequency, scaled so a balanced set gets weight 1"""
    if not class_weighting:
        return (1.0, 1.0)
    (neg, pos) = split_by_class(bags)
    if len(neg) == 0 or len(pos) == 0:
        raise SingleClassDataset("class weighting needs both classes, got {}/{} bags".format(len(neg), len(pos)))
    N = float(len(neg) + len(pos))
    return (N / (2.0 * len(neg)), N / (2.0 * len(pos)))

def train(train_bags, config=None, init=None, rng=None, epoch_losses=None):
    """epochs * len(train_bags) single-bag Adam steps; warm starts from init when given.

    Mean loss of each epoch is appended to epoch_losses if a list is passed.
    """
    if config is None:
        config = TrainConfig()
    if rng is None:
        rng = RngStream(0, "train")
    train_bags = list(train_bags)
    if len(train_bags) == 0:
        raise ValueError("no bags to train on")
    class_weights = class_weights_for(train_bags, config.class_weighting)

    if init is None:
        params = MilParams.init(train_bags[0].dim, config.embed_dim, config.attention_dim, rng.child("init"),
                                gated=config.gated, dtype=config.dtype)
    else:
        params = init.astype(config.dtype)

    m = params.zeros_like()
    v = params.zeros_like()
    step = 0
    shuffle_rng = rng.child("shuffle")
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_bags))
        total = 0.0
        for i in order:
            bag = train_bags[i]
            (loss, grads) = loss_and_grads(bag, bag.label, params, class_weights)
            total += loss
            step += 1
            bias1 = 1.0 - config.beta1**step
            bias2 = 1.0 - config.beta2**step
            for name in params.names():
                w = params.arrays[name]
                g = grads.arrays[name] + config.weight_decay * w
                m.arrays[name] = config.beta1 * m.arrays[name] + (1.0 - config.beta1) * g
                v.arrays[name] = config.beta2 * v.arrays[name] + (1.0 - config.beta2) * g**2
                m_hat = m.arrays[name] / bias1
                v_hat = v.arrays[name] / bias2
                params.arrays[name] = (w - lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(params.dtype)
            if not params.is_finite():
                raise NonFiniteValue("classifier parameters became non-finite at epoch {} step {} (bag '{}')".format(
                    epoch, step, bag.bag_id))
        if epoch_losses is not None:
            epoch_losses.append(total / len(train_bags))

    return params

def predict_score(bag, params):
    (logits, _, _) = forward(bag, params)
    return float(softmax(np.asarray(logits, dtype=np.float64))[1])

def attention_scores(bag, params):
    return forward(bag, params)[1]
