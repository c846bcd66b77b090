"""
     chunkformer: multi-stage chunked transformer encoder for long sequences
     Copyright (C), 2024 the chunkformer developers

     This program is free software: you can redistribute it and/or modify
     it under the terms of the GNU General Public License as published by
     the Free Software Foundation, either version 3 of the License, or
     (at your option) any later version.

     This program is distributed in the hope that it will be useful,
     but WITHOUT ANY WARRANTY; without even the implied warranty of
     MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
     GNU General Public License for more details.

     You should have received a copy of the GNU General Public License
     along with this program.  If not, see <https://www.gnu.org/licenses/>.

     This module defines the shared keyword handling, name registration
     and the exception hierarchy.

"""

from __future__ import annotations
import copy
import time
import typing as tp
import numpy as np
import numpy.typing as npt

# declare numpy types
NDArrayFloat = npt.NDArray[np.float64]
NDArrayInt = npt.NDArray[np.int64]
NDArrayBool = npt.NDArray[np.bool_]


class ChunkFormerError(Exception):
    """Base class of all package errors. exit_code is what the command
    line returns when the error reaches it.
    """

    exit_code: int = 1
    category: str = "error"

    def __init__(self, message):
        message = f"\n\n{message}\n"
        super().__init__(message)


class ConfigError(ChunkFormerError):
    exit_code = 2
    category = "config"


class KeywordError(ConfigError):
    pass


class MissingKeywordError(ConfigError):
    pass


class InputError(ConfigError):
    pass


class IngestionError(ChunkFormerError):
    exit_code = 3
    category = "ingestion"


class SchemaError(IngestionError):
    pass


class EncodingError(IngestionError):
    pass


class NumericError(ChunkFormerError):
    exit_code = 4
    category = "numeric"


class DimensionError(NumericError):
    pass


class ContractError(NumericError):
    pass


class DegenerateRowError(NumericError):
    pass


class MetricError(NumericError):
    pass


class CompatibilityError(ChunkFormerError):
    exit_code = 5
    category = "compatibility"


class input_parsing(object):
    """Provides the routines to parse and process keyword arguments.
    All derived classes declare the allowed keyword arguments, their
    default values and types in the following format:

    defaults = {"key": [value, (allowed instances)]

    and a list of mandatory keywords in lrk. A nested list in lrk means
    that exactly one of the listed keywords must be given.

    __initialize_keyword_variables__(kwargs) checks the mandatory
    keywords, registers all defaults as instance variables, and then
    updates them with the values in kwargs.
    """

    def __init__(self):
        raise NotImplementedError("input parsing has no instance!")

    def __initialize_keyword_variables__(self, kwargs: dict) -> None:
        """check, register and update keyword variables"""

        self.update = False
        # help() shows the class defaults
        self.defaults_copy = copy.deepcopy(self.defaults)
        self.__check_mandatory_keywords__(self.lrk, kwargs)
        self.__register_variable_names__(self.defaults, kwargs)
        self.__update_dict_entries__(self.defaults, kwargs)
        self.update = True

    def __check_mandatory_keywords__(self, lrk: tp.List, kwargs: dict) -> None:
        """Verify that all elements of lrk have a corresponding key in
        kwargs.  If not, raise MissingKeywordError"""

        for key in lrk:
            if isinstance(key, list):
                has_key = sum(k in kwargs and kwargs[k] != "None" for k in key)
                if has_key != 1:
                    raise MissingKeywordError(f"give exactly one of {key}")
            elif key not in kwargs:
                raise MissingKeywordError(
                    f"{key} is a mandatory keyword for {self.__class__.__name__}"
                )

    def __register_variable_names__(
        self,
        defaults: dict[str, list[tp.Any, tuple]],
        kwargs: dict,
    ) -> None:
        """Register the key value[0] pairs as instance variables."""
        for key, value in defaults.items():
            setattr(self, key, copy.deepcopy(value[0]))

        self.kwargs: dict = kwargs

    def __update_dict_entries__(
        self,
        defaults: dict[str, list[tp.Any, tuple]],
        kwargs: dict[str, tp.Any],
    ) -> None:
        """Compare kwargs against the defaults dictionary. Unknown keys
        raise KeywordError, values of the wrong type raise InputError.
        Otherwise the instance variable is updated.

        defaults = {"key": [value, (allowed instances)]
        kwargs = {"key": value}
        """
        for key, value in kwargs.items():
            if key not in defaults:
                raise KeywordError(
                    f"{key} is not a valid keyword for {self.__class__.__name__}"
                )

            allowed = defaults[key][1]
            # bool is an int, but an int is never a valid bool
            if isinstance(value, bool) and bool not in _as_tuple(allowed):
                raise InputError(
                    f"{value} for {key} must be of type {allowed}, not bool"
                )
            if not isinstance(value, allowed):
                raise InputError(
                    f"{value} for {key} must be of type {allowed}, not {type(value)}"
                )

            defaults[key][0] = value
            setattr(self, key, value)

    def __register_name_new__(self) -> None:
        """If self.parent is set, register self with the parent model
        and set full_name to parent.full_name + self.name. Otherwise
        full_name = name.
        """

        if self.parent == "None":
            self.full_name = self.name
        else:
            self.full_name = f"{self.parent.full_name}.{self.name}"
            reg = self.parent.model
            if self.full_name in reg.dmo:
                raise KeywordError(f"{self.full_name} is a duplicate name")
            reg.lmo.append(self.full_name)
            reg.dmo.update({self.full_name: self})
        self.reg_time = time.monotonic()


def _as_tuple(allowed) -> tuple:
    return allowed if isinstance(allowed, tuple) else (allowed,)


class chunkformerBase(input_parsing):
    """The chunkformer base class template. This class handles keyword
    arguments, name registration and other common tasks

    define required keywords in lrk:
       self.lrk: tp.List = ["name"]

    define default and allowed type per keyword:
       self.defaults: dict[str, list[any, tuple]] = {
                                  "name": ["None", (str)],
                                  "heads": [4, (int)],
                                  "dropout_rate": [0.1, (int, float)],
                                  }

    parse and register all keywords with the instance
    self.__initialize_keyword_variables__(kwargs)

    register the instance with its parent model
    self.__register_name_new__()
    """

    def __init__(self) -> None:
        raise NotImplementedError

    def __repr__(self) -> str:
        m = f"{self.__class__.__name__}(\n"
        for k, v in self.kwargs.items():
            if isinstance(v, chunkformerBase):
                m = f"{m}    {k} = {getattr(v, 'name', v.__class__.__name__)},\n"
            elif isinstance(v, str):
                m = f"{m}    {k} = '{v}',\n"
            elif isinstance(v, (list, np.ndarray)):
                m = f"{m}    {k} = {list(v[:6])},\n"
            else:
                m = f"{m}    {k} = {v},\n"
        return f"{m})"

    def to_dict(self) -> dict:
        """Return the current keyword values as a plain dictionary. Only
        keywords declared in defaults are returned, so the result can be
        passed back into the constructor.
        """
        return {k: copy.deepcopy(getattr(self, k)) for k in self.defaults}

    def help(self) -> None:
        """Show all keywords, their default values and allowed types."""
        print(f"\n{self.__class__.__name__} has the following keywords:\n")
        for k, v in self.defaults_copy.items():
            print(f"{k} defaults to {v[0]}, allowed types = {v[1]}")
        print()
        print("The following keywords are mandatory:")
        for kw in self.lrk:
            print(f"{kw}")

    def check_choice(self, key: str, choices: tp.Iterable[str]) -> None:
        """Raise ConfigError unless getattr(self, key) is in choices"""
        value = getattr(self, key)
        if value not in choices:
            raise ConfigError(f"{key} = {value!r} must be one of {sorted(choices)}")
