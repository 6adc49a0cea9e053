"""Domain-incremental sequence runner.

At session t the classifier sees only what its strategy is allowed to see
(D_t, plus a buffer or synthetic replay), then is evaluated on every test
set to fill row t of the train-test matrix.
"""
from __future__ import print_function
import sys, time, warnings

from aglrtk.core import AccessViolation, RngStream, parallel_map, split_by_class
from aglrtk.gmm import EmConfig
from aglrtk.metrics import TrainTestMatrix, cl_report, evaluate_scores
from aglrtk.mil import TrainConfig, predict_score, train
from aglrtk.replay import ReplayConfig, assemble_hybrid, assert_synthetic_only, build_replay_set, fit_family

STRATEGIES = ("naive", "joint", "cumulative", "replay", "gdumb", "aglr")
RESERVED_STRATEGIES = ("ewc", "si", "lwf")
# whether a strategy keeps real bags of past episodes around
PAST_RAW_DATA = { "naive" : False, "joint" : True, "cumulative" : True, "replay" : True, "gdumb" : True, "aglr" : False }
BUFFER_POLICY = { "replay" : "reservoir", "gdumb" : "greedy_balanced" }

class Strategy(object):
    def __init__(self, name, buffer_size=100, replay_config=None):
        if name in RESERVED_STRATEGIES:
            raise NotImplementedError("strategy '{}' is reserved but not implemented".format(name))
        if name not in STRATEGIES:
            raise ValueError("unknown strategy '{}', expected one of {}".format(name, ", ".join(STRATEGIES)))
        if name in BUFFER_POLICY and buffer_size < 1:
            raise ValueError("buffer_size {} < 1".format(buffer_size))
        self.name = name
        self.buffer_size = int(buffer_size) if name in BUFFER_POLICY else None
        if name == "aglr":
            self.replay_config = replay_config if replay_config is not None else ReplayConfig()
        else:
            self.replay_config = None

    @property
    def stores_past_raw_data(self):
        return PAST_RAW_DATA[self.name]

    @property
    def buffer_policy(self):
        return BUFFER_POLICY.get(self.name)

    @property
    def warm_start(self):
        return self.name not in ("joint", "gdumb")

    def __repr__(self):
        if self.buffer_size is not None:
            return "Strategy({}, buffer_size={})".format(self.name, self.buffer_size)
        if self.replay_config is not None:
            return "Strategy({}, {})".format(self.name, self.replay_config)
        return "Strategy({})".format(self.name)

class SequenceSpec(object):
    def __init__(self, name, episodes, seed=0):
        self.name = str(name)
        self.episodes = list(episodes)
        self.seed = int(seed)
        if len(self.episodes) < 2:
            raise ValueError("sequence '{}' needs at least 2 episodes, got {}".format(self.name, len(self.episodes)))
        dims = set(b.dim for ep in self.episodes for b in ep.train + ep.test)
        if len(dims) != 1:
            raise ValueError("sequence '{}' mixes embedding dims {}".format(self.name, sorted(dims)))
        for (t, ep) in enumerate(self.episodes):
            if ep.domain_id != t + 1:
                raise ValueError("sequence '{}' episode {} has domain_id {}".format(self.name, t + 1, ep.domain_id))

    @property
    def T(self):
        return len(self.episodes)

    @property
    def dim(self):
        return self.episodes[0].train[0].dim

class BufferState(object):
    def __init__(self, capacity, policy, bags=(), seen=0):
        self.capacity = int(capacity)
        self.policy = policy
        self.bags = tuple(bags)
        self.seen = int(seen)

    def class_counts(self):
        (neg, pos) = split_by_class(self.bags)
        return (len(neg), len(pos))

    def __len__(self):
        return len(self.bags)

class RunResult(object):
    def __init__(self, matrix, report, strategy, episode_seconds, family_sizes=None, families=None,
                 checkpoints=None, config_echo=""):
        self.matrix = matrix
        self.report = report
        self.strategy = strategy
        self.episode_seconds = list(episode_seconds)
        self.family_sizes = list(family_sizes) if family_sizes is not None else []
        self.families = list(families) if families is not None else []
        self.checkpoints = list(checkpoints) if checkpoints is not None else []
        self.config_echo = config_echo

def update_buffer(buffer_state, new_bags, policy, capacity, rng):
    """returns a new buffer state after streaming new_bags through the policy"""
    if capacity < 1:
        raise ValueError("buffer capacity {} < 1".format(capacity))
    if policy not in ("reservoir", "greedy_balanced"):
        raise ValueError("unknown buffer policy '{}'".format(policy))
    if buffer_state is None:
        buffer_state = BufferState(capacity, policy)
    bags = list(buffer_state.bags)
    seen = buffer_state.seen

    for bag in new_bags:
        seen += 1
        if len(bags) < capacity:
            bags.append(bag)
        elif policy == "reservoir":
            j = rng.integers(0, seen)
            if j < capacity:
                bags[j] = bag
        else:
            # GDumb: admit the bag if its class is below the largest class, evicting from that class
            counts = {0 : 0, 1 : 0}
            for b in bags:
                counts[b.label] += 1
            largest = 0 if counts[0] >= counts[1] else 1
            if counts.get(bag.label, 0) < counts[largest]:
                members = [i for (i, b) in enumerate(bags) if b.label == largest]
                del bags[members[rng.integers(0, len(members))]]
                bags.append(bag)

    return BufferState(capacity, policy, bags, seen)

def build_training_set(strategy, t, episodes, families, buffer_state, rng):
    """training bags of session t (1-based) under strategy"""
    if t < 1:
        raise ValueError("session index {} < 1".format(t))
    current = episodes[t-1].train
    if strategy.name == "naive":
        return list(current)
    elif strategy.name == "cumulative":
        return [b for ep in episodes[:t] for b in ep.train]
    elif strategy.name == "joint":
        return [b for ep in episodes for b in ep.train]
    elif strategy.name == "replay":
        return list(current) + (list(buffer_state.bags) if buffer_state is not None else [])
    elif strategy.name == "gdumb":
        return list(buffer_state.bags) if buffer_state is not None else []
    elif strategy.name == "aglr":
        if len(families) == 0:
            return assemble_hybrid(current, [], rng.child("hybrid"))
        synthetic = build_replay_set(families, len(current), rng.child("replay"))
        return assemble_hybrid(current, synthetic, rng.child("hybrid"))
    raise ValueError("unknown strategy '{}'".format(strategy.name))

def check_episodic_access(strategy, t, bags):
    """raise AccessViolation if the training set of session t breaks the strategy's data access rule"""
    for b in bags:
        if strategy.name != "joint" and b.domain_id > t:
            raise AccessViolation("bag '{}' from future domain {} in session {}".format(b.bag_id, b.domain_id, t))
        if strategy.name == "naive" and b.domain_id != t:
            raise AccessViolation("naive session {} got bag '{}' from domain {}".format(t, b.bag_id, b.domain_id))
        if b.synthetic and strategy.name != "aglr":
            raise AccessViolation("synthetic bag '{}' in a {} training set".format(b.bag_id, strategy.name))
    if strategy.name == "aglr":
        assert_synthetic_only(bags, t)

def evaluate_row(params, episodes, threshold=0.5, n_jobs=1):
    """metric triple on each episode's test set, all with the same parameters"""
    row = []
    for ep in episodes:
        scores = parallel_map(n_jobs, lambda b: predict_score(b, params), ep.test)
        triple = evaluate_scores([b.label for b in ep.test], scores, threshold)
        if triple.auroc is None:
            warnings.warn("test set of episode {} has a single class, AUROC and AUPRC undefined".format(ep.domain_id))
        row.append(triple)
    return row

def run_sequence(spec, strategy, train_config=None, rng=None, em_config=None, ilm_variant="seen", threshold=0.5,
                 n_jobs=1, verbose=False, on_episode=None, resume=None, config_echo=""):
    """Train through spec.episodes under strategy and fill the T x T matrix.

    on_episode(t, params, family, row) is called after every session (family
    is None except for aglr).  resume = {"start" : k, "params" : M_k,
    "families" : [...], "rows" : [row_1 .. row_k]} continues after session k.
    """
    if train_config is None:
        train_config = TrainConfig()
    if em_config is None:
        em_config = EmConfig()
    if rng is None:
        rng = RngStream(spec.seed, "run")
    episodes = spec.episodes
    T = spec.T
    matrix = TrainTestMatrix(T)

    if strategy.name == "joint":
        if resume is not None:
            raise ValueError("joint training cannot be resumed")
        start = time.time()
        bags = build_training_set(strategy, T, episodes, [], None, rng.child("joint"))
        check_episodic_access(strategy, T, bags)
        if verbose:
            sys.stderr.write("joint: training on {} bags from {} episodes\n".format(len(bags), T))
        params = train(bags, train_config, None, rng.child("joint").child("train"))
        row = evaluate_row(params, episodes, threshold, n_jobs)
        for j in range(T):
            matrix.set(0, j, row[j])
        for i in range(1, T):
            matrix.copy_row(0, i)
        if on_episode is not None:
            on_episode(T, params, None, row)
        report = cl_report(matrix, ilm_variant)
        report.mark_not_applicable()
        return RunResult(matrix, report, strategy, [time.time() - start], checkpoints=[params],
                         config_echo=config_echo)

    params = None
    families = []
    buffer_state = None
    checkpoints = []
    seconds = []
    first = 1
    if resume is not None:
        if strategy.buffer_policy is not None:
            raise ValueError("strategy '{}' keeps a buffer and cannot be resumed".format(strategy.name))
        first = int(resume["start"]) + 1
        params = resume["params"]
        families = list(resume.get("families", []))
        for (i, row) in enumerate(resume["rows"]):
            for j in range(T):
                matrix.set(i, j, row[j])
        if strategy.name == "aglr" and len(families) != first - 1:
            raise ValueError("resuming at session {} needs {} families, got {}".format(first, first - 1, len(families)))

    for t in range(first, T + 1):
        start = time.time()
        ep_rng = rng.child("episode{}".format(t))
        if strategy.name == "gdumb":
            buffer_state = update_buffer(buffer_state, episodes[t-1].train, strategy.buffer_policy,
                                         strategy.buffer_size, ep_rng.child("buffer"))

        bags = build_training_set(strategy, t, episodes, families, buffer_state, ep_rng)
        check_episodic_access(strategy, t, bags)
        if verbose:
            n_syn = sum(1 for b in bags if b.synthetic)
            sys.stderr.write("episode {}/{}: {} training on {} bags ({} synthetic)\n".format(
                t, T, strategy.name, len(bags), n_syn))

        init = params if strategy.warm_start else None
        params = train(bags, train_config, init, ep_rng.child("train"))

        family = None
        if strategy.name == "aglr":
            family = fit_family(episodes[t-1], params, strategy.replay_config, em_config, ep_rng.child("family"))
            families.append(family)
            if verbose:
                sys.stderr.write("episode {}/{}: GMM family {}\n".format(t, T, family.n_components()))
        if strategy.name == "replay":
            buffer_state = update_buffer(buffer_state, episodes[t-1].train, strategy.buffer_policy,
                                         strategy.buffer_size, ep_rng.child("buffer"))

        row = evaluate_row(params, episodes, threshold, n_jobs)
        for j in range(T):
            matrix.set(t - 1, j, row[j])
        checkpoints.append(params)
        seconds.append(time.time() - start)
        if on_episode is not None:
            on_episode(t, params, family, row)

    report = cl_report(matrix, ilm_variant)
    return RunResult(matrix, report, strategy, seconds, family_sizes=[f.n_components() for f in families],
                     families=families, checkpoints=checkpoints, config_echo=config_echo)
