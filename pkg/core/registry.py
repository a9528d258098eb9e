import importlib
import inspect
import pkgutil
from typing import Dict, List, Type

from loguru import logger

from core.fitters.base import BaseFitter


class FitterRegistry:
    """Maps method names (tt, ht, cp, lift) to BaseFitter subclasses."""

    def __init__(self):
        self._fitters: Dict[str, Type[BaseFitter]] = {}

    def register(self, name: str, fitter_cls: Type[BaseFitter]):
        """Adds `fitter_cls` under the lower-cased method name, replacing any earlier entry."""
        self._fitters[name.lower()] = fitter_cls
        logger.debug(f"[Registry] Registered fitter: {name}")

    def get_fitter(self, name: str) -> BaseFitter:
        """A fresh fitter for `name`; the first lookup triggers discovery."""
        if not self._fitters:
            self.auto_discover()
        fitter_cls = self._fitters.get(name.lower())
        if not fitter_cls:
            raise KeyError(f"Fitter '{name}' not found in registry (known: {', '.join(self.list_fitters())}).")
        return fitter_cls()

    def list_fitters(self) -> List[str]:
        return sorted(self._fitters.keys())

    def auto_discover(self, package_path: str = "core.fitters"):
        """Imports every module of `package_path` and registers the concrete fitters it defines."""
        package = importlib.import_module(package_path)
        prefix = package.__name__ + "."

        for info in pkgutil.iter_modules(package.__path__, prefix):
            module = importlib.import_module(info.name)
            for _, item in inspect.getmembers(module, inspect.isclass):
                if issubclass(item, BaseFitter) and item is not BaseFitter and not inspect.isabstract(item):
                    # NAME wins over the class name ("CPFitter" -> "cp")
                    fitter_name = getattr(item, "NAME", "") or item.__name__.replace("Fitter", "")
                    self.register(fitter_name.lower(), item)


# shared by the CLI and the experiment commands
registry = FitterRegistry()
