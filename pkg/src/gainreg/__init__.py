"""Cart-pole simulation, gain-regularized RNN controller training, and
settling-time evaluation toolkit."""

__version__ = "0.1.0"

_SUBMODULES = ("plant", "controllers", "training", "evaluation", "deploy", "svgplot", "cli")


def __getattr__(name):
    # Lazy submodule access keeps `import gainreg` light so the CLI can pin
    # thread counts before numpy loads.
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
