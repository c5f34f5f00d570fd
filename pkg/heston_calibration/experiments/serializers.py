"""
Validation of experiment configuration documents.

The plain serializers turn JSON (a ``--config`` file merged with command-line
flags, or a POST body) into the domain objects the solvers take: ``save()``
returns a ``MarketSpec``, ``HestonParams``, ``CalibConfig`` or
``ExperimentSpec`` rather than a model instance. A config snapshot written next
to a report is itself a valid document.
"""
from rest_framework import serializers

from calibration.calibrator import LINE_SEARCHES, CalibConfig
from calibration.gradient import FORMS
from pricing.exceptions import HestonError
from pricing.grid import MIN_CELLS, TruncationConfig, build_grid
from pricing.params import HestonParams, MarketSpec, ParameterBox

from .models import RunRecord, StudyRun
from .studies import STUDIES, ExperimentSpec


class DomainSerializer(serializers.Serializer):
    """Builds a domain object from validated data; its ParameterError/GridError become field-less errors."""

    domain_class = None

    def build(self, attrs):
        return self.domain_class(**attrs)

    def validate(self, attrs):
        try:
            self.build(attrs)
        except HestonError as exc:
            raise serializers.ValidationError(str(exc)) from exc
        return attrs

    def create(self, validated_data):
        return self.build(validated_data)


class MarketSerializer(DomainSerializer):
    domain_class = MarketSpec

    K = serializers.FloatField(required=False)
    r = serializers.FloatField(required=False)
    q = serializers.FloatField(required=False)
    T = serializers.FloatField(required=False)
    option_kind = serializers.ChoiceField(choices=['put'], required=False)


class HestonParamsSerializer(DomainSerializer):
    domain_class = HestonParams

    sigma_nu = serializers.FloatField()
    rho = serializers.FloatField()
    kappa_nu = serializers.FloatField()
    mu_nu = serializers.FloatField()


class TruncationSerializer(DomainSerializer):
    domain_class = TruncationConfig

    x_half_width = serializers.FloatField(required=False, min_value=0.0)
    nu_max = serializers.FloatField(required=False)
    x_min = serializers.FloatField(required=False, allow_null=True)
    x_max = serializers.FloatField(required=False, allow_null=True)


class CalibConfigSerializer(DomainSerializer):
    domain_class = CalibConfig

    lam = serializers.FloatField(required=False)
    u_ref = HestonParamsSerializer(required=False, allow_null=True)
    gamma = serializers.FloatField(required=False)
    epsilon = serializers.FloatField(required=False)
    gradient_rtol = serializers.FloatField(required=False)
    max_iters = serializers.IntegerField(required=False, min_value=0)
    min_step = serializers.FloatField(required=False)
    box = serializers.DictField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2),
        required=False,
    )
    theta = serializers.FloatField(required=False)
    line_search = serializers.ChoiceField(choices=LINE_SEARCHES, required=False)
    gradient_form = serializers.ChoiceField(choices=FORMS, required=False)

    def build(self, attrs):
        attrs = dict(attrs)
        if attrs.get('u_ref') is not None:
            attrs['u_ref'] = HestonParamsSerializer().build(attrs['u_ref'])
        if 'box' in attrs:
            attrs['box'] = ParameterBox.from_mapping(attrs['box'])
        return CalibConfig(**attrs)


class ExperimentSpecSerializer(DomainSerializer):
    study = serializers.ChoiceField(choices=STUDIES, required=False)
    market = MarketSerializer(required=False)
    reference = HestonParamsSerializer(required=False)
    initial = HestonParamsSerializer(required=False)
    n_x = serializers.IntegerField(required=False, min_value=MIN_CELLS)
    n_nu = serializers.IntegerField(required=False, min_value=MIN_CELLS)
    n_tau = serializers.IntegerField(required=False, min_value=MIN_CELLS)
    meshes = serializers.ListField(child=serializers.IntegerField(min_value=MIN_CELLS), required=False, min_length=1)
    maturities = serializers.ListField(child=serializers.FloatField(), required=False, min_length=1)
    deltas = serializers.ListField(child=serializers.FloatField(), required=False, min_length=1)
    samples = serializers.IntegerField(required=False)
    seed = serializers.IntegerField(required=False, min_value=0)
    workers = serializers.IntegerField(required=False)
    record_timing = serializers.BooleanField(required=False)
    output_dir = serializers.CharField(required=False)
    truncation = TruncationSerializer(required=False)
    calibration = CalibConfigSerializer(required=False)

    NESTED = {
        'market': MarketSerializer,
        'reference': HestonParamsSerializer,
        'initial': HestonParamsSerializer,
        'truncation': TruncationSerializer,
        'calibration': CalibConfigSerializer,
    }

    def build(self, attrs):
        attrs = dict(attrs)
        for name, serializer_class in self.NESTED.items():
            if name in attrs:
                attrs[name] = serializer_class().build(attrs[name])
        for name in ('meshes', 'maturities', 'deltas'):
            if name in attrs:
                attrs[name] = tuple(attrs[name])
        spec = ExperimentSpec(**attrs)
        # the strike must sit inside the truncated domain
        spec.grid()
        return spec


class PriceRequestSerializer(DomainSerializer):
    market = MarketSerializer(required=False)
    params = HestonParamsSerializer()
    n_x = serializers.IntegerField(min_value=MIN_CELLS, default=80)
    n_nu = serializers.IntegerField(min_value=MIN_CELLS, default=80)
    n_tau = serializers.IntegerField(min_value=MIN_CELLS, default=40)
    truncation = TruncationSerializer(required=False)
    theta = serializers.FloatField(default=None, allow_null=True)
    s0 = serializers.FloatField()
    nu0 = serializers.FloatField(min_value=0.0)
    analytic = serializers.BooleanField(default=False)

    def validate_s0(self, value):
        if not value > 0.0:
            raise serializers.ValidationError("Spot must be positive.")
        return value

    def build(self, attrs):
        market = MarketSerializer().build(attrs.get('market', {}))
        truncation = TruncationSerializer().build(attrs.get('truncation', {}))
        return {
            'market': market,
            'params': HestonParamsSerializer().build(attrs['params']),
            'grid': build_grid(market, attrs['n_x'], attrs['n_nu'], attrs['n_tau'], truncation),
            'theta': attrs['theta'],
            's0': attrs['s0'],
            'nu0': attrs['nu0'],
            'analytic': attrs['analytic'],
        }


class RunRecordSerializer(serializers.ModelSerializer):
    class Meta:
        model = RunRecord
        exclude = ['id', 'study_run']


class StudyRunSerializer(serializers.ModelSerializer):
    records = RunRecordSerializer(many=True, read_only=True)

    class Meta:
        model = StudyRun
        fields = ['id', 'study', 'seed', 'config', 'failed_runs', 'created_at', 'records']


class StudyRunListSerializer(serializers.ModelSerializer):
    run_count = serializers.IntegerField(source='records.count', read_only=True)

    class Meta:
        model = StudyRun
        fields = ['id', 'study', 'seed', 'failed_runs', 'created_at', 'run_count']
