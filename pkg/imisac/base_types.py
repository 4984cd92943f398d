"""
Value types of the unified intelligent-metasurface transceiver model.

A transceiver maps S baseband streams to the radiating aperture through three
slices:
 - the baseband processing matrix V (K x S), applied at the K RF chains;
 - one RF feeding matrix T_l per layer, carrying the previous stage (the RF
 chains for layer 0, layer l-1 otherwise) onto the N_l elements of layer l;
 - one diagonal reconfiguration matrix Q_l per layer, the tunable element
 coefficients.
The effective transmit matrix is E = Q_{L-1} T_{L-1} ... Q_0 T_0 V (N_{L-1} x S).

All types here are immutable NamedTuples. Arrays held by them must not be
mutated after construction; helpers always return fresh arrays.
Layers are indexed from 0 (the layer fed by the RF chains) to L-1 (the
radiating layer).
"""

import hashlib
import struct
from enum import Enum
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from imisac.constraints import ConstraintFamily

SPEED_OF_LIGHT = 299_792_458.0

# Default microstrip parameters of waveguide-fed surfaces.
DEFAULT_WAVEGUIDE_ATTENUATION = 0.58  # nepers / m
DEFAULT_WAVEGUIDE_PERMITTIVITY = 2.2


class ArchitectureKind(Enum):
    RIS = "RIS"
    SIM = "SIM"
    DMA = "DMA"
    RHS = "RHS"
    CUSTOM = "Custom"


class FeedingTopology(Enum):
    DENSE_DIFFRACTION = "dense_diffraction"
    BLOCK_DIAGONAL_WAVEGUIDE = "block_diagonal_waveguide"
    SCALAR_CARRIER = "scalar_carrier"


class PowerNormalization(Enum):
    """
    How radiated power is normalized across the stacked structure.
    """

    NONE = "none"
    """
    E is the raw product of the slices.
    """

    PER_LAYER = "per_layer"
    """
    Every feeding matrix is scaled to unit spectral norm, so each layer is
    passive (never amplifies) on its own.
    """

    END_TO_END = "end_to_end"
    """
    E is rescaled so that its Frobenius norm equals that of V: the whole
    structure is lossless in aggregate.
    """


def canonical_bytes(*items: Union[np.ndarray, float, int, str, complex, None]) -> bytes:
    """
    Little-endian, full double precision serialization used for provenance
    hashes. Arrays contribute their shape and row-major complex128 bytes.
    """
    out = bytearray()
    for item in items:
        if item is None:
            out += b"N"
        elif isinstance(item, str):
            data = item.encode("utf-8")
            out += b"S" + struct.pack("<q", len(data)) + data
        elif isinstance(item, (bool, int, np.integer)) and not isinstance(item, complex):
            out += b"I" + struct.pack("<q", int(item))
        elif isinstance(item, (float, np.floating)):
            out += b"F" + struct.pack("<d", float(item))
        elif isinstance(item, (complex, np.complexfloating)):
            out += b"C" + struct.pack("<dd", item.real, item.imag)
        else:
            arr = np.ascontiguousarray(np.asarray(item), dtype="<c16")
            out += b"A" + struct.pack("<q", arr.ndim)
            out += struct.pack(f"<{arr.ndim}q", *arr.shape)
            out += arr.tobytes(order="C")
    return bytes(out)


def digest(*items) -> str:
    return hashlib.sha256(canonical_bytes(*items)).hexdigest()


def planar_grid(
    num_elements: int, spacing: float, z: float = 0.0, columns: Optional[int] = None
) -> np.ndarray:
    """
    Element positions (num_elements x 3, meters) on a rectangular grid in the
    plane z, centered on the z axis and filled row by row along x. With
    columns == num_elements this is a uniform linear array along x.
    """
    if columns is None:
        columns = int(np.ceil(np.sqrt(num_elements)))
    rows = int(np.ceil(num_elements / columns))
    idx = np.arange(num_elements)
    x = (idx % columns - (columns - 1) / 2.0) * spacing
    y = (idx // columns - (rows - 1) / 2.0) * spacing
    return np.column_stack([x, y, np.full(num_elements, float(z))])


class LayerSpec(NamedTuple):
    """
    One metasurface layer.
    - positions: N x 3 element positions in meters.
    - feeding: topology of the feeding matrix that illuminates this layer.
    - constraint: feasible set of the layer's element coefficients.
    - waveguide: for waveguide-fed layers, the RF chain (waveguide) each element
    sits on; -1 marks an unassigned element.
    - arclength: for waveguide-fed layers, distance in meters of each element
    from its waveguide's feed point.
    """

    positions: np.ndarray
    feeding: FeedingTopology
    constraint: ConstraintFamily
    waveguide: Optional[np.ndarray] = None
    arclength: Optional[np.ndarray] = None

    @property
    def num_elements(self) -> int:
        return int(self.positions.shape[0])


class ArchitectureSpec(NamedTuple):
    """
    Declarative description of an intelligent-metasurface transceiver.
    - element_spacing is in wavelengths; layer_spacing is in meters.
    - feed_positions locates the K RF-chain antennas that illuminate a
    diffraction-fed first layer (SIM); unused otherwise.
    - carrier_attenuation is the single complex factor of a scalar carrier
    feed (RIS).
    """

    kind: ArchitectureKind
    layers: Tuple[LayerSpec, ...]
    num_rf_chains: int
    num_streams: int
    carrier_frequency: float
    element_spacing: float = 0.5
    layer_spacing: float = 0.0
    feed_positions: Optional[np.ndarray] = None
    carrier_attenuation: complex = 1.0
    power_normalization: PowerNormalization = PowerNormalization.NONE
    waveguide_attenuation: float = DEFAULT_WAVEGUIDE_ATTENUATION
    waveguide_permittivity: float = DEFAULT_WAVEGUIDE_PERMITTIVITY
    power_budget: float = 1.0

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def elements_per_layer(self) -> List[int]:
        return [layer.num_elements for layer in self.layers]

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def element_area(self) -> float:
        return (self.element_spacing * self.wavelength) ** 2

    @property
    def aperture_positions(self) -> np.ndarray:
        """
        Element positions of the radiating (last) layer.
        """
        return self.layers[-1].positions

    @property
    def has_digital_precoding(self) -> bool:
        if self.kind in (ArchitectureKind.DMA, ArchitectureKind.RHS):
            return True
        if self.kind == ArchitectureKind.CUSTOM:
            return self.num_rf_chains > 1
        return False

    @property
    def waveguide_phase_constant(self) -> float:
        """
        Guided-wave phase constant beta = 2 pi f sqrt(eps_r) / c in rad/m.
        """
        return 2.0 * np.pi * self.carrier_frequency * np.sqrt(
            self.waveguide_permittivity
        ) / SPEED_OF_LIGHT

    def spec_hash(self) -> str:
        items: List = [
            self.kind.value,
            self.num_rf_chains,
            self.num_streams,
            float(self.carrier_frequency),
            float(self.element_spacing),
            float(self.layer_spacing),
            self.feed_positions,
            complex(self.carrier_attenuation),
            self.power_normalization.value,
            float(self.waveguide_attenuation),
            float(self.waveguide_permittivity),
            float(self.power_budget),
        ]
        for layer in self.layers:
            c = layer.constraint
            items += [
                layer.positions,
                layer.feeding.value,
                c.kind.value,
                float(c.lo),
                float(c.hi),
                np.asarray(c.levels, dtype=float),
                layer.waveguide,
                layer.arclength,
            ]
        return digest(*items)

    @staticmethod
    def create_ris(
        num_elements: int,
        carrier_frequency: float,
        element_spacing: float = 0.5,
        carrier_attenuation: complex = 1.0,
        power_budget: float = 1.0,
        columns: Optional[int] = None,
    ) -> "ArchitectureSpec":
        """
        Single-RF-chain, carrier-fed, phase-only reflecting surface.
        """
        wavelength = SPEED_OF_LIGHT / carrier_frequency
        layer = LayerSpec(
            positions=planar_grid(num_elements, element_spacing * wavelength, columns=columns),
            feeding=FeedingTopology.SCALAR_CARRIER,
            constraint=ConstraintFamily.unit_modulus(),
        )
        return ArchitectureSpec(
            kind=ArchitectureKind.RIS,
            layers=(layer,),
            num_rf_chains=1,
            num_streams=1,
            carrier_frequency=carrier_frequency,
            element_spacing=element_spacing,
            carrier_attenuation=carrier_attenuation,
            power_budget=power_budget,
        )

    @staticmethod
    def create_sim(
        elements_per_layer: Union[int, Sequence[int]],
        num_layers: int,
        num_rf_chains: int,
        carrier_frequency: float,
        num_streams: Optional[int] = None,
        element_spacing: float = 0.5,
        thickness_wavelengths: float = 5.0,
        power_normalization: PowerNormalization = PowerNormalization.END_TO_END,
        power_budget: float = 1.0,
    ) -> "ArchitectureSpec":
        """
        Stacked transmissive layers spread evenly over a fixed total thickness,
        illuminated by a half-wavelength linear array of RF-chain antennas one
        layer spacing in front of the first layer.
        """
        wavelength = SPEED_OF_LIGHT / carrier_frequency
        if isinstance(elements_per_layer, (int, np.integer)):
            elements_per_layer = [int(elements_per_layer)] * num_layers
        spacing = thickness_wavelengths * wavelength / num_layers
        layers = tuple(
            LayerSpec(
                positions=planar_grid(n, element_spacing * wavelength, z=l * spacing),
                feeding=FeedingTopology.DENSE_DIFFRACTION,
                constraint=ConstraintFamily.unit_modulus(),
            )
            for l, n in enumerate(elements_per_layer)
        )
        feeds = planar_grid(num_rf_chains, wavelength / 2.0, z=-spacing, columns=num_rf_chains)
        return ArchitectureSpec(
            kind=ArchitectureKind.SIM,
            layers=layers,
            num_rf_chains=num_rf_chains,
            num_streams=num_streams or num_rf_chains,
            carrier_frequency=carrier_frequency,
            element_spacing=element_spacing,
            layer_spacing=spacing,
            feed_positions=feeds,
            power_normalization=power_normalization,
            power_budget=power_budget,
        )

    @staticmethod
    def _waveguide_layer(
        num_elements: int,
        num_rf_chains: int,
        spacing: float,
        constraint: ConstraintFamily,
    ) -> LayerSpec:
        # One waveguide per grid row, fed from the row's -x end.
        per_guide = int(np.ceil(num_elements / num_rf_chains))
        positions = planar_grid(num_elements, spacing, columns=per_guide)
        idx = np.arange(num_elements)
        return LayerSpec(
            positions=positions,
            feeding=FeedingTopology.BLOCK_DIAGONAL_WAVEGUIDE,
            constraint=constraint,
            waveguide=idx // per_guide,
            arclength=(idx % per_guide) * spacing,
        )

    @staticmethod
    def create_dma(
        num_elements: int,
        num_rf_chains: int,
        carrier_frequency: float,
        num_streams: Optional[int] = None,
        element_spacing: float = 0.25,
        power_normalization: PowerNormalization = PowerNormalization.NONE,
        power_budget: float = 1.0,
    ) -> "ArchitectureSpec":
        """
        Waveguide-fed radiating surface with Lorentzian-constrained elements, one
        microstrip per RF chain.
        """
        wavelength = SPEED_OF_LIGHT / carrier_frequency
        layer = ArchitectureSpec._waveguide_layer(
            num_elements,
            num_rf_chains,
            element_spacing * wavelength,
            ConstraintFamily.lorentzian(),
        )
        return ArchitectureSpec(
            kind=ArchitectureKind.DMA,
            layers=(layer,),
            num_rf_chains=num_rf_chains,
            num_streams=num_streams or num_rf_chains,
            carrier_frequency=carrier_frequency,
            element_spacing=element_spacing,
            power_normalization=power_normalization,
            power_budget=power_budget,
        )

    @staticmethod
    def create_rhs(
        num_elements: int,
        num_rf_chains: int,
        carrier_frequency: float,
        num_streams: Optional[int] = None,
        amplitude_levels: Optional[Sequence[float]] = None,
        amplitude_range: Tuple[float, float] = (0.0, 1.0),
        element_spacing: float = 0.25,
        power_normalization: PowerNormalization = PowerNormalization.NONE,
        power_budget: float = 1.0,
    ) -> "ArchitectureSpec":
        """
        Waveguide-fed holographic surface with amplitude-only elements, either
        continuous within amplitude_range or restricted to amplitude_levels.
        """
        wavelength = SPEED_OF_LIGHT / carrier_frequency
        if amplitude_levels:
            constraint = ConstraintFamily.amplitude_set(amplitude_levels)
        else:
            constraint = ConstraintFamily.amplitude_range(*amplitude_range)
        layer = ArchitectureSpec._waveguide_layer(
            num_elements, num_rf_chains, element_spacing * wavelength, constraint
        )
        return ArchitectureSpec(
            kind=ArchitectureKind.RHS,
            layers=(layer,),
            num_rf_chains=num_rf_chains,
            num_streams=num_streams or num_rf_chains,
            carrier_frequency=carrier_frequency,
            element_spacing=element_spacing,
            power_normalization=power_normalization,
            power_budget=power_budget,
        )


class BasebandProcessor(NamedTuple):
    """
    Digital side of the transceiver: the K x S matrix V and the total transmit
    power budget it must respect (||V||_F^2 <= power_budget).
    """

    matrix: np.ndarray
    power_budget: float

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))

    @staticmethod
    def carrier(power: float) -> "BasebandProcessor":
        """
        Carrier-only feed: V collapses to the 1 x 1 scalar sqrt(p).
        """
        return BasebandProcessor(np.array([[np.sqrt(power)]], dtype=complex), power)

    @staticmethod
    def power_allocation(powers: Sequence[float], power_budget: Optional[float] = None) -> "BasebandProcessor":
        """
        Diagonal nonnegative V of per-stream powers (no digital precoding).
        """
        powers = np.asarray(powers, dtype=float)
        budget = float(np.sum(powers)) if power_budget is None else power_budget
        return BasebandProcessor(np.diag(np.sqrt(powers)).astype(complex), budget)

    @staticmethod
    def equal_power(num_rf_chains: int, num_streams: int, power_budget: float) -> "BasebandProcessor":
        """
        Stream s on RF chain s, total power split evenly.
        """
        matrix = np.zeros((num_rf_chains, num_streams), dtype=complex)
        matrix[np.arange(num_streams), np.arange(num_streams)] = np.sqrt(
            power_budget / num_streams
        )
        return BasebandProcessor(matrix, power_budget)

    @staticmethod
    def for_architecture(spec: ArchitectureSpec) -> "BasebandProcessor":
        if spec.kind == ArchitectureKind.RIS:
            return BasebandProcessor.carrier(spec.power_budget)
        return BasebandProcessor.equal_power(
            spec.num_rf_chains, spec.num_streams, spec.power_budget
        )


class FeedingMatrix(NamedTuple):
    """
    RF feeding matrix T_l of layer l (N_l x M, M = K for layer 0 and N_{l-1}
    otherwise), tagged with the topology that produced it.
    """

    layer_index: int
    matrix: np.ndarray
    topology: FeedingTopology


class ReconfigState(NamedTuple):
    """
    Per-layer element coefficients q_l (the diagonals of Q_l).
    """

    coefficients: Tuple[np.ndarray, ...]

    @property
    def num_layers(self) -> int:
        return len(self.coefficients)

    def q_matrix(self, layer: int) -> np.ndarray:
        return np.diag(self.coefficients[layer])

    def phases(self, layer: int) -> np.ndarray:
        return np.mod(np.angle(self.coefficients[layer]), 2.0 * np.pi)

    def amplitudes(self, layer: int) -> np.ndarray:
        return np.abs(self.coefficients[layer])

    def with_layer(self, layer: int, q: np.ndarray) -> "ReconfigState":
        coefficients = list(self.coefficients)
        coefficients[layer] = np.array(q, dtype=complex)
        return ReconfigState(tuple(coefficients))

    def state_hash(self) -> str:
        return digest(*self.coefficients)

    @staticmethod
    def from_coefficients(coefficients: Iterable[np.ndarray]) -> "ReconfigState":
        return ReconfigState(tuple(np.array(q, dtype=complex) for q in coefficients))

    @staticmethod
    def neutral(spec: ArchitectureSpec) -> "ReconfigState":
        """
        Zero phase (or maximum amplitude) on every element.
        """
        return ReconfigState(
            tuple(layer.constraint.neutral(layer.num_elements) for layer in spec.layers)
        )

    @staticmethod
    def random(spec: ArchitectureSpec, rng: np.random.Generator) -> "ReconfigState":
        """
        I.i.d. uniformly random feasible state.
        """
        return ReconfigState(
            tuple(
                layer.constraint.sample(rng, layer.num_elements) for layer in spec.layers
            )
        )


class EffectiveTransmitMatrix(NamedTuple):
    """
    E = (prod_l Q_l T_l) V together with the hashes of the architecture and state it
    was built from.
    """

    matrix: np.ndarray
    spec_hash: str
    state_hash: str


class Violation(NamedTuple):
    field: str
    message: str


class ValidationReport(NamedTuple):
    violations: Tuple[Violation, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    def messages(self) -> List[str]:
        return [f"{v.field}: {v.message}" for v in self.violations]

