"""On-disk formats: binary bag files, text manifests, npz archives for GMM
families and classifier checkpoints, and the CSV result tables.

A bag file is a packed little-endian header

    magic "AGLR" | version u32 | D u32 | n u32 | label u8 | domain_id u16 | synthetic u8

(20 bytes) followed by n*D float32 values, row-major.
"""
import os
import numpy as np

from aglrtk.core import EpisodeDataset, FeatureBag, validate_bag
from aglrtk.gmm import GmmModel
from aglrtk.harness import SequenceSpec
from aglrtk.metrics import METRICS, TrainTestMatrix
from aglrtk.mil import MilParams
from aglrtk.replay import GmmFamily

MAGIC = b"AGLR"
VERSION = 1
HEADER_DTYPE = np.dtype([("magic", "S4"), ("version", "<u4"), ("dim", "<u4"), ("n", "<u4"),
                         ("label", "u1"), ("domain_id", "<u2"), ("synthetic", "u1")])
MANIFEST_NAME = "manifest.txt"

class BagFileError(ValueError):
    pass
class BadMagic(BagFileError):
    pass
class BadVersion(BagFileError):
    pass
class TruncatedPayload(BagFileError):
    pass

################################################################################
# bags

def write_bag(path, bag):
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["dim"] = bag.dim
    header["n"] = bag.n
    header["label"] = bag.label
    header["domain_id"] = bag.domain_id
    header["synthetic"] = int(bag.synthetic)
    with open(path, "wb") as fout:
        fout.write(header.tobytes())
        fout.write(np.ascontiguousarray(bag.embeddings, dtype="<f4").tobytes())

def read_bag(path, bag_id=None):
    """FeatureBag from path; bag_id defaults to the file stem"""
    with open(path, "rb") as fin:
        raw = fin.read()
    if len(raw) >= 4 and raw[:4] != MAGIC:
        raise BadMagic("{}: bad magic {!r}, expected {!r}".format(path, raw[:4], MAGIC))
    if len(raw) < HEADER_DTYPE.itemsize:
        raise TruncatedPayload("{}: {} bytes, shorter than the {} byte header".format(path, len(raw), HEADER_DTYPE.itemsize))
    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if int(header["version"]) != VERSION:
        raise BadVersion("{}: version {}, expected {}".format(path, int(header["version"]), VERSION))

    (dim, n) = (int(header["dim"]), int(header["n"]))
    expected = 4 * n * dim
    payload = raw[HEADER_DTYPE.itemsize:]
    if len(payload) < expected:
        raise TruncatedPayload("{}: payload has {} bytes, header needs {} (n={}, D={})".format(
            path, len(payload), expected, n, dim))
    if len(payload) > expected:
        raise BagFileError("{}: {} trailing bytes after payload".format(path, len(payload) - expected))

    emb = np.frombuffer(payload, dtype="<f4").reshape((n, dim)).astype(np.float32)
    if bag_id is None:
        bag_id = os.path.splitext(os.path.basename(path))[0]
    return FeatureBag(bag_id, int(header["domain_id"]), int(header["label"]), emb,
                      synthetic=bool(header["synthetic"]))

################################################################################
# manifests

class ManifestRecord(object):
    def __init__(self, path, bag_id, domain_id, split, label):
        self.path = path
        self.bag_id = bag_id
        self.domain_id = int(domain_id)
        self.split = split
        self.label = int(label)

def read_manifest(path):
    """returns (name, dim, records), record paths resolved against the manifest's directory"""
    base = os.path.dirname(os.path.abspath(path))
    name = None
    dim = None
    records = []
    with open(path) as fin:
        for (l_i, line) in enumerate(fin):
            fields = line.split()
            if len(fields) == 0 or fields[0].startswith("#"):
                continue
            where = "{}:{}".format(path, l_i + 1)
            if fields[0] == "sequence" and len(fields) == 2:
                name = fields[1]
            elif fields[0] == "dim" and len(fields) == 2:
                dim = int(fields[1])
            elif fields[0] == "bag" and len(fields) == 6:
                if fields[4] not in ("train", "test"):
                    raise ValueError("{}: split '{}' not train or test".format(where, fields[4]))
                records.append(ManifestRecord(os.path.join(base, fields[1]), fields[2], fields[3], fields[4], fields[5]))
            else:
                raise ValueError("{}: can't parse manifest line '{}'".format(where, line.strip()))
    if name is None or dim is None:
        raise ValueError("{}: manifest needs 'sequence' and 'dim' lines".format(path))
    return (name, dim, records)

def write_manifest(path, name, dim, records):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w") as fout:
        fout.write("sequence {}\n".format(name))
        fout.write("dim {}\n".format(dim))
        for r in records:
            fout.write("bag {} {} {} {} {}\n".format(os.path.relpath(r.path, base), r.bag_id, r.domain_id, r.split, r.label))

def write_suite(episodes, out_dir, name):
    """write every bag under out_dir/bags/ plus out_dir/manifest.txt, returns the manifest path"""
    bag_dir = os.path.join(out_dir, "bags")
    if not os.path.isdir(bag_dir):
        os.makedirs(bag_dir)
    records = []
    for ep in episodes:
        for (split, bags) in (("train", ep.train), ("test", ep.test)):
            for bag in bags:
                bag_path = os.path.join(bag_dir, bag.bag_id + ".bag")
                write_bag(bag_path, bag)
                records.append(ManifestRecord(bag_path, bag.bag_id, bag.domain_id, split, bag.label))
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(manifest, name, episodes[0].train[0].dim, records)
    return manifest

def load_episodes(path):
    """returns (name, dim, episodes) with every bag validated against the manifest"""
    (name, dim, records) = read_manifest(path)
    splits = {}
    for r in records:
        bag = read_bag(r.path, r.bag_id)
        validate_bag(bag, dim)
        if bag.label != r.label or bag.domain_id != r.domain_id:
            raise BagFileError("{}: header label/domain {}/{} disagree with manifest {}/{}".format(
                r.path, bag.label, bag.domain_id, r.label, r.domain_id))
        splits.setdefault(r.domain_id, {"train" : [], "test" : []})[r.split].append(bag)
    domains = sorted(splits)
    if domains != list(range(1, len(domains) + 1)):
        raise ValueError("{}: domain ids {} are not 1..T".format(path, domains))
    return (name, dim, [EpisodeDataset(t, splits[t]["train"], splits[t]["test"]) for t in domains])

def load_sequence(path, seed=0):
    (name, dim, episodes) = load_episodes(path)
    return SequenceSpec(name, episodes, seed)

################################################################################
# families and checkpoints

def write_family(path, family):
    arrays = { "domain_id" : np.array(family.domain_id), "class_counts" : np.array(family.class_counts),
               "q_used" : np.array(family.q_used), "emb_dim" : np.array(family.emb_dim),
               "attention_filtering" : np.array(family.attention_filtering),
               "fit_sample_counts" : np.array([family.fit_sample_counts.get(c, -1) for c in (0, 1)]) }
    for (kind, models) in (("emb", family.emb_models), ("count", family.count_models)):
        for (c, model) in models.items():
            arrays.update(model.as_arrays("{}{}_".format(kind, c)))
    with open(path, "wb") as fout:
        np.savez(fout, **arrays)

def read_family(path):
    with np.load(path) as archive:
        arrays = dict((k, archive[k]) for k in archive.files)
    models = {"emb" : {}, "count" : {}}
    for kind in models:
        for c in (0, 1):
            prefix = "{}{}_".format(kind, c)
            if prefix + "weights" in arrays:
                models[kind][c] = GmmModel.from_arrays(arrays, prefix)
    fit_counts = dict((c, int(v)) for (c, v) in enumerate(arrays["fit_sample_counts"]) if v >= 0)
    return GmmFamily(int(arrays["domain_id"]), models["emb"], models["count"], tuple(arrays["class_counts"]),
                     float(arrays["q_used"]), int(arrays["emb_dim"]),
                     attention_filtering=bool(arrays["attention_filtering"]), fit_sample_counts=fit_counts)

def write_checkpoint(path, params):
    arrays = dict(params.arrays)
    arrays["gated"] = np.array(params.gated)
    with open(path, "wb") as fout:
        np.savez(fout, **arrays)

def read_checkpoint(path):
    with np.load(path) as archive:
        arrays = dict((k, archive[k]) for k in archive.files)
    gated = bool(arrays.pop("gated"))
    return MilParams(arrays, gated=gated)

################################################################################
# result tables

def _float_str(v):
    if v is None or not np.isfinite(v):
        return "nan"
    return repr(float(v))

def write_matrix_csv(path, matrix):
    with open(path, "w") as fout:
        fout.write("train_session,test_set," + ",".join(METRICS) + "\n")
        for i in range(matrix.T):
            for j in range(matrix.T):
                cell = matrix[i, j]
                fout.write("{},{},{}\n".format(i + 1, j + 1, ",".join(_float_str(v) for v in cell)))

def read_matrix_csv(path):
    with open(path) as fin:
        lines = [l.strip() for l in fin if len(l.strip()) > 0]
    if len(lines) == 0 or lines[0].split(",") != ["train_session", "test_set"] + list(METRICS):
        raise ValueError("{}: missing matrix header".format(path))
    rows = [l.split(",") for l in lines[1:]]
    T = int(round(np.sqrt(len(rows))))
    if T * T != len(rows) or T < 1:
        raise ValueError("{}: {} cells is not a square matrix".format(path, len(rows)))
    matrix = TrainTestMatrix(T)
    for (k, fields) in enumerate(rows):
        (i, j) = (int(fields[0]) - 1, int(fields[1]) - 1)
        if (i, j) != divmod(k, T):
            raise ValueError("{}: cell ({}, {}) out of row-major order".format(path, i + 1, j + 1))
        values = [float(v) for v in fields[2:]]
        # weighted F1 is always defined; nan ranking metrics mean a single-class test set
        matrix.set(i, j, [values[0]] + [None if np.isnan(v) else v for v in values[1:]])
    return matrix

def _report_str(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(v)
    return _float_str(v)

def write_report_csv(path, report):
    with open(path, "w") as fout:
        fout.write("metric,ACC,ILM,BWT,excluded_cells,bwt_defined\n")
        for metric in METRICS:
            v = report[metric]
            fout.write(",".join([metric] + [_report_str(v[k]) for k in ("ACC", "ILM", "BWT", "excluded_cells", "bwt_defined")]) + "\n")

def write_summary_csv(path, first_column, rows):
    """rows of (label, report[, past_raw_data]); one output line per (label, metric)"""
    with_flag = len(rows) > 0 and len(rows[0]) > 2
    with open(path, "w") as fout:
        fout.write("{},metric,ACC,ILM,BWT{}\n".format(first_column, ",past_raw_data" if with_flag else ""))
        for row in rows:
            (label, report) = row[:2]
            for metric in METRICS:
                fields = [label, metric] + [_report_str(report[metric][k]) for k in ("ACC", "ILM", "BWT")]
                if with_flag:
                    fields.append(_report_str(bool(row[2])))
                fout.write(",".join(fields) + "\n")

def write_attention_csv(path, scored_bags):
    """scored_bags: iterable of (bag_id, attention vector)"""
    with open(path, "w") as fout:
        fout.write("bag_id,instance_index,attention\n")
        for (bag_id, attention) in scored_bags:
            for (i, a) in enumerate(attention):
                fout.write("{},{},{}\n".format(bag_id, i, repr(float(a))))
