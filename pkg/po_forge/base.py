"""Base
========

Common base class of the configurable objects and the exception hierarchy
used across the package.
"""
from typing import Dict, Any

from tree_config import apply_config, read_config_from_object

from po_forge.utils import get_class_bases

__all__ = (
    'ForgeBase', 'get_config_prop_names', 'ForgeError', 'ModelError',
    'UnsupportedModeError', 'IdentificationError', 'PositivityError',
    'IllConditionedError', 'DataError')


def get_config_prop_names(obj_or_cls) -> list:
    """Returns all the names listed in ``_config_props_`` of the class and its
    bases, in declaration order.
    """
    cls = obj_or_cls if isinstance(obj_or_cls, type) else type(obj_or_cls)
    names = {}
    for c in list(get_class_bases(cls)) + [cls]:
        for name in c.__dict__.get('_config_props_', ()):
            names[name] = None
    return list(names)


class ForgeBase:
    """Base class for all the named, configurable objects of the package
    (estimator settings, run configs, studies).

    Configurable properties are listed in ``_config_props_`` and are read and
    applied with :mod:`tree_config`.
    """

    _config_props_ = ('name', )

    name: str = ''
    '''A human readable name, used in logs and reports.
    '''

    def __init__(self, name='', **kwargs):
        super(ForgeBase, self).__init__(**kwargs)
        self.name = name

    def get_config(self) -> Dict[str, Any]:
        """Returns the dict of the current configurable properties.
        """
        return read_config_from_object(self)

    def apply_settings(self, config: Dict[str, Any]) -> None:
        """Applies a (possibly partial) config dict. Unknown keys are rejected
        with a :class:`ModelError`.
        """
        known = set(get_config_prop_names(self))
        unknown = sorted(set(config) - known)
        if unknown:
            raise ModelError(
                f'Unknown settings for {self.__class__.__name__}: {unknown}')
        apply_config(self, dict(config))

    @classmethod
    def from_config(cls, config: Dict[str, Any] = None, **kwargs):
        obj = cls(**kwargs)
        if config:
            obj.apply_settings(config)
        return obj


class ForgeError(Exception):
    """Base of all errors raised by the package.
    """


class ModelError(ForgeError, ValueError):
    """Invalid model or config content, unknown labels or keys, or mismatched
    dimensions.
    """


class UnsupportedModeError(ForgeError):
    """The operation does not support the instrument mode of the model.
    """


class IdentificationError(ForgeError):
    """A functional that is not point identified was given to an estimator.
    """

    def __init__(self, functional: str = '', residual: float = float('nan'),
                 msg: str = ''):
        self.functional = functional
        self.residual = residual
        if not msg:
            msg = (
                f'Functional "{functional}" is not identified (residual '
                f'{residual:.3g}); run the identify command for the full '
                f'report')
        super().__init__(msg)


class PositivityError(ForgeError, ValueError):
    """An instrument probability or a type probability used as a denominator
    is too small.
    """


class IllConditionedError(ForgeError):
    """A Gram matrix is singular or numerically ill-conditioned.
    """


class DataError(ForgeError, ValueError):
    """A data set is malformed.
    """
