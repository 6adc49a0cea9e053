from __future__ import print_function
import re, sys

from aglrtk.parse_utils import ThrowingArgumentParser, em_dict_from_args, write_em_args, add_em_args_to_parser
from aglrtk.gmm import EmConfig
from aglrtk.mil import TrainConfig
from aglrtk.replay import ReplayConfig
from aglrtk.synthetic import SyntheticDomainSpec

def _on_off(value, name):
    return ' -{}'.format(name) if value else ' -no_{}'.format(name)

class AglrSettings(object):
    def __init__(self):
        self.data = { "em" : { "cov_type" : "full", "max_iterations" : 200, "tolerance" : 1.0e-4, "regularizer" : 1.0e-6,
                               "n_init" : 3, "n_jobs" : 1 },
            "train" : { "epochs" : 20, "learning_rate" : 1.0e-4, "weight_decay" : 1.0e-5, "embed_dim" : 128,
                        "attention_dim" : 64, "gated" : False, "class_weighting" : True, "dtype" : "float32" },
            "replay" : { "q" : 80.0, "abf" : True, "emb_k" : [8, 16, 24], "count_k" : [1, 2, 3, 4, 5] },
            "buffer" : { "size" : 100 },
            "metrics" : { "ilm" : "seen", "threshold" : 0.5 },
            "synthetic" : { "dim" : 32, "domains" : 3, "train_bags" : 40, "test_bags" : 10, "bag_size" : [50, 200],
                            "witness_rate" : 0.2, "noise" : 1.0, "signal" : 3.0, "shift" : 2.0, "mix" : 1.0,
                            "name" : "synthetic" },
            "verbose" : False
            }

        self.parsers = {}

        self.parser_print_settings = ThrowingArgumentParser(prog="print_settings",description="print settings")
        self.parser_print_settings.add_argument("-keyword_regexp",type=str)
        self.parsers["print_settings"] = (self.parse_print_settings, self.parser_print_settings.format_usage(), self.parser_print_settings.format_help(), None)

        self.parser_em = ThrowingArgumentParser(prog="em",description="expectation-maximization fits of the GMM families")
        add_em_args_to_parser(self.parser_em)
        self.parsers["em"] = (self.parse_em, self.parser_em.format_usage(), self.parser_em.format_help(), self.write_em)

        self.parser_train = ThrowingArgumentParser(prog="train",description="attention MIL classifier training")
        self.parser_train.add_argument("-epochs",type=int,default=None)
        self.parser_train.add_argument("-learning_rate","-lr",type=float,default=None)
        self.parser_train.add_argument("-weight_decay",type=float,default=None,help="L2 coefficient added to the gradient")
        self.parser_train.add_argument("-embed_dim",type=int,default=None,help="projected embedding size d")
        self.parser_train.add_argument("-attention_dim",type=int,default=None,help="attention hidden size L")
        group = self.parser_train.add_mutually_exclusive_group()
        group.add_argument("-gated",action='store_true',help="gated attention")
        group.add_argument("-no_gated",action='store_true')
        group = self.parser_train.add_mutually_exclusive_group()
        group.add_argument("-class_weighting",action='store_true',help="inverse class frequency loss weights")
        group.add_argument("-no_class_weighting",action='store_true')
        self.parser_train.add_argument("-dtype",type=str,choices=["float32","float64"],default=None)
        self.parsers["train"] = (self.parse_train, self.parser_train.format_usage(), self.parser_train.format_help(), self.write_train)

        self.parser_replay = ThrowingArgumentParser(prog="replay",description="generative latent replay families")
        self.parser_replay.add_argument("-q",type=float,default=None,help="percent of highest-attention instances kept per bag")
        group = self.parser_replay.add_mutually_exclusive_group()
        group.add_argument("-abf",action='store_true',help="attention-based filtering")
        group.add_argument("-no_abf",action='store_true')
        self.parser_replay.add_argument("-emb_k",type=int,nargs='+',default=None,metavar="K",help="embedding GMM component candidates")
        self.parser_replay.add_argument("-count_k",type=int,nargs='+',default=None,metavar="K",help="bag size GMM component candidates")
        self.parsers["replay"] = (self.parse_replay, self.parser_replay.format_usage(), self.parser_replay.format_help(), self.write_replay)

        self.parser_buffer = ThrowingArgumentParser(prog="buffer",description="buffer of real bags for replay and gdumb")
        self.parser_buffer.add_argument("-size",type=int,default=None,help="capacity in bags")
        self.parsers["buffer"] = (self.parse_buffer, self.parser_buffer.format_usage(), self.parser_buffer.format_help(), self.write_buffer)

        self.parser_metrics = ThrowingArgumentParser(prog="metrics",description="evaluation")
        self.parser_metrics.add_argument("-ilm",type=str,choices=["seen","all"],default=None,
                                         help="ILM over the lower triangle (seen) or the mean of row means (all)")
        self.parser_metrics.add_argument("-threshold",type=float,default=None,help="positive class score threshold for weighted F1")
        self.parsers["metrics"] = (self.parse_metrics, self.parser_metrics.format_usage(), self.parser_metrics.format_help(), self.write_metrics)

        self.parser_synthetic = ThrowingArgumentParser(prog="synthetic",description="synthetic domain-shift suite")
        self.parser_synthetic.add_argument("-dim",type=int,default=None)
        self.parser_synthetic.add_argument("-domains",type=int,default=None)
        self.parser_synthetic.add_argument("-train_bags",type=int,default=None,help="per class per domain")
        self.parser_synthetic.add_argument("-test_bags",type=int,default=None,help="per class per domain")
        self.parser_synthetic.add_argument("-bag_size",type=int,nargs=2,default=None,metavar=("MIN","MAX"))
        self.parser_synthetic.add_argument("-witness_rate",type=float,default=None)
        self.parser_synthetic.add_argument("-noise",type=float,default=None)
        self.parser_synthetic.add_argument("-signal",type=float,default=None)
        self.parser_synthetic.add_argument("-shift",type=float,default=None)
        self.parser_synthetic.add_argument("-mix",type=float,default=None)
        self.parser_synthetic.add_argument("-name",type=str,default=None)
        self.parsers["synthetic"] = (self.parse_synthetic, self.parser_synthetic.format_usage(), self.parser_synthetic.format_help(), self.write_synthetic)

        self.parser_verbose = ThrowingArgumentParser(prog="verbose",description="progress messages on stderr, toggle by default")
        group = self.parser_verbose.add_mutually_exclusive_group()
        group.add_argument("-on",action='store_true')
        group.add_argument("-off",action='store_true')
        self.parsers["verbose"] = (self.parse_verbose, self.parser_verbose.format_usage(), self.parser_verbose.format_help(), self.write_verbose)

    def __getitem__(self,key):
        return self.data[key]

    def write(self, fout, key_re=None):
        for keyword in self.parsers:
            if (key_re is None or re.search(key_re, keyword)) and self.parsers[keyword][3] is not None:
                fout.write(self.parsers[keyword][3]())

    def parse_print_settings(self, args):
        args = self.parser_print_settings.parse_args(args)
        self.write(sys.stdout, key_re=args.keyword_regexp)
        return None

    def write_em(self):
        return 'em'+write_em_args(self.data["em"])+'\n'
    def parse_em(self, args):
        args = self.parser_em.parse_args(args)
        self.data["em"].update(em_dict_from_args(args))
        return "em"

    def write_train(self):
        t = self.data["train"]
        args_str = 'train'
        args_str += ' -epochs {}'.format(t["epochs"])
        args_str += ' -learning_rate {!r}'.format(t["learning_rate"])
        args_str += ' -weight_decay {!r}'.format(t["weight_decay"])
        args_str += ' -embed_dim {}'.format(t["embed_dim"])
        args_str += ' -attention_dim {}'.format(t["attention_dim"])
        args_str += _on_off(t["gated"], "gated")
        args_str += _on_off(t["class_weighting"], "class_weighting")
        args_str += ' -dtype {}'.format(t["dtype"])
        return args_str+'\n'
    def parse_train(self, args):
        args = self.parser_train.parse_args(args)
        for f in ["epochs", "learning_rate", "weight_decay", "embed_dim", "attention_dim", "dtype"]:
            if getattr(args,f) is not None:
                self.data["train"][f] = getattr(args,f)
        if args.gated:
            self.data["train"]["gated"] = True
        elif args.no_gated:
            self.data["train"]["gated"] = False
        if args.class_weighting:
            self.data["train"]["class_weighting"] = True
        elif args.no_class_weighting:
            self.data["train"]["class_weighting"] = False
        return "train"

    def write_replay(self):
        r = self.data["replay"]
        args_str = 'replay'
        args_str += ' -q {!r}'.format(r["q"])
        args_str += _on_off(r["abf"], "abf")
        args_str += ' -emb_k ' + ' '.join(str(k) for k in r["emb_k"])
        args_str += ' -count_k ' + ' '.join(str(k) for k in r["count_k"])
        return args_str+'\n'
    def parse_replay(self, args):
        args = self.parser_replay.parse_args(args)
        if args.q is not None:
            self.data["replay"]["q"] = args.q
        if args.abf:
            self.data["replay"]["abf"] = True
        elif args.no_abf:
            self.data["replay"]["abf"] = False
        if args.emb_k is not None:
            self.data["replay"]["emb_k"] = list(args.emb_k)
        if args.count_k is not None:
            self.data["replay"]["count_k"] = list(args.count_k)
        return "replay"

    def write_buffer(self):
        return 'buffer -size {}\n'.format(self.data["buffer"]["size"])
    def parse_buffer(self, args):
        args = self.parser_buffer.parse_args(args)
        if args.size is not None:
            self.data["buffer"]["size"] = args.size
        return "buffer"

    def write_metrics(self):
        return 'metrics -ilm {} -threshold {!r}\n'.format(self.data["metrics"]["ilm"], self.data["metrics"]["threshold"])
    def parse_metrics(self, args):
        args = self.parser_metrics.parse_args(args)
        if args.ilm is not None:
            self.data["metrics"]["ilm"] = args.ilm
        if args.threshold is not None:
            self.data["metrics"]["threshold"] = args.threshold
        return "metrics"

    def write_synthetic(self):
        s = self.data["synthetic"]
        args_str = 'synthetic'
        for f in ["dim", "domains", "train_bags", "test_bags"]:
            args_str += ' -{} {}'.format(f, s[f])
        args_str += ' -bag_size {} {}'.format(s["bag_size"][0], s["bag_size"][1])
        for f in ["witness_rate", "noise", "signal", "shift", "mix"]:
            args_str += ' -{} {!r}'.format(f, s[f])
        args_str += ' -name {}'.format(s["name"])
        return args_str+'\n'
    def parse_synthetic(self, args):
        args = self.parser_synthetic.parse_args(args)
        for f in self.data["synthetic"]:
            if getattr(args,f) is not None:
                self.data["synthetic"][f] = getattr(args,f)
        return "synthetic"

    def write_verbose(self):
        return 'verbose -on\n' if self.data["verbose"] else 'verbose -off\n'
    def parse_verbose(self, args):
        args = self.parser_verbose.parse_args(args)
        if args.on:
            self.data["verbose"] = True
        elif args.off:
            self.data["verbose"] = False
        else: # toggle
            self.data["verbose"] = not self.data["verbose"]
        return "verbose"

    ############################################################################
    # configuration objects

    def em_config(self):
        e = self.data["em"]
        return EmConfig(cov_type=e["cov_type"], max_iterations=e["max_iterations"], tolerance=e["tolerance"],
                        covariance_regularizer=e["regularizer"], n_init=e["n_init"], n_jobs=e["n_jobs"])

    def train_config(self):
        t = self.data["train"]
        return TrainConfig(epochs=t["epochs"], learning_rate=t["learning_rate"], weight_decay=t["weight_decay"],
                           class_weighting=t["class_weighting"], embed_dim=t["embed_dim"],
                           attention_dim=t["attention_dim"], gated=t["gated"], dtype=t["dtype"])

    def replay_config(self):
        r = self.data["replay"]
        return ReplayConfig(q=r["q"], emb_k_candidates=r["emb_k"], count_k_candidates=r["count_k"],
                            attention_filtering=r["abf"])

    def synthetic_spec(self):
        s = self.data["synthetic"]
        return SyntheticDomainSpec(dim=s["dim"], domains=s["domains"], train_bags=s["train_bags"],
                                   test_bags=s["test_bags"], bag_size=s["bag_size"], witness_rate=s["witness_rate"],
                                   noise=s["noise"], signal=s["signal"], shift=s["shift"], mix=s["mix"], name=s["name"])

    @property
    def buffer_size(self):
        return self.data["buffer"]["size"]

    @property
    def verbose(self):
        return self.data["verbose"]
