from __future__ import print_function
import argparse

# subclass ArgumentParser to throw errors instead of exiting
class ArgumentParserError(Exception):
    pass
class ArgumentParserHelp(Exception):
    pass

class ThrowingArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentParserError(message)
    def exit(self, status=0, message=None):
        raise ArgumentParserHelp("help")

def int_list(string):
    """parse '8,16,24' (or a single int) into a list of ints"""
    try:
        vals = [int(v) for v in string.split(",") if len(v.strip()) > 0]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated integers, got '{}'".format(string))
    if len(vals) == 0:
        raise argparse.ArgumentTypeError("empty integer list '{}'".format(string))
    return vals

def em_dict_from_args(args):
    d = {}
    for f in ["cov_type", "max_iterations", "tolerance", "regularizer", "n_init", "n_jobs"]:
        if hasattr(args,f) and getattr(args,f) is not None:
            d[f] = getattr(args,f)
    return d

def write_em_args(em_args):
    string = ''
    string += ' -cov_type {}'.format(em_args["cov_type"])
    string += ' -max_iterations {}'.format(em_args["max_iterations"])
    string += ' -tolerance {!r}'.format(em_args["tolerance"])
    string += ' -regularizer {!r}'.format(em_args["regularizer"])
    string += ' -n_init {}'.format(em_args["n_init"])
    string += ' -n_jobs {}'.format(em_args["n_jobs"])
    return string

def add_em_args_to_parser(arg_parser):
    arg_parser.add_argument("-cov_type",type=str,choices=["full","diagonal"],default=None)
    arg_parser.add_argument("-max_iterations",type=int,default=None)
    arg_parser.add_argument("-tolerance",type=float,default=None,help="bound on change of mean per-sample log-likelihood")
    arg_parser.add_argument("-regularizer",type=float,default=None,help="added to covariance diagonals")
    arg_parser.add_argument("-n_init",type=int,default=None,help="independent EM restarts")
    arg_parser.add_argument("-n_jobs",type=int,default=None,help="threads for restarts and K candidates")
