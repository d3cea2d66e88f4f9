from pathlib import Path

from werkzeug.datastructures import MultiDict
from wtforms import FloatField, Form, IntegerField, SelectField, StringField
from wtforms.validators import AnyOf, DataRequired, InputRequired, NumberRange, Optional, ValidationError

from stl import FormulaError, parse_param_decl
from systems import SYSTEM_KINDS
from utils import ConformaError


class ConfigError(ConformaError):
    """The run configuration is missing values or holds invalid ones"""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__('invalid configuration:\n  ' + '\n  '.join(self.errors))


def _open_unit_interval(form, field):
    if field.data is not None and not 0 < field.data < 1:
        raise ValidationError('must lie strictly between 0 and 1')


class TestSettingsForm(Form):
    """[test] section"""
    __test__ = False

    c = FloatField('Threshold c', validators=[InputRequired(), _open_unit_interval])
    alpha_d = FloatField('Desired confidence', validators=[InputRequired(), _open_unit_interval])
    k1 = IntegerField('Batch size X', validators=[Optional(), NumberRange(min=1)])
    k2 = IntegerField('Batch size Y', validators=[Optional(), NumberRange(min=1)])
    max_samples = IntegerField('Sample cap per side', validators=[Optional(), NumberRange(min=1)])
    seed = IntegerField('Master seed', validators=[Optional(), NumberRange(min=0, max=2 ** 63 - 1)])
    tol = FloatField('Bisection tolerance', validators=[Optional()])
    horizon = FloatField('Simulation horizon (s)', validators=[Optional()])
    step = FloatField('Simulation step (s)', validators=[Optional()])
    threads = IntegerField('Worker threads', validators=[Optional(), NumberRange(min=1, max=256)])

    def validate_tol(self, field):
        if field.data is not None and not field.data > 0:
            raise ValidationError('must be positive')

    def validate_horizon(self, field):
        if field.data is not None and not field.data > 0:
            raise ValidationError('must be positive')

    def validate_step(self, field):
        if field.data is None:
            return
        if not field.data > 0:
            raise ValidationError('must be positive')
        if self.horizon.data is not None and field.data > self.horizon.data:
            raise ValidationError('must not exceed the horizon')


class ParameterForm(Form):
    """One parameter declaration: name, direction and search bracket"""
    name = StringField('Name', validators=[DataRequired()])
    direction = StringField('Direction', validators=[
        DataRequired(),
        AnyOf(['increasing', 'decreasing', 'inc', 'dec'], message='use increasing or decreasing')
    ])
    lo = FloatField('Bracket low', validators=[InputRequired()])
    hi = FloatField('Bracket high', validators=[InputRequired()])

    def validate_hi(self, field):
        if self.lo.data is not None and field.data is not None and not field.data > self.lo.data:
            raise ValidationError('bracket high must exceed bracket low')


class FormulaForm(Form):
    """[formula] section"""
    text = StringField('Formula', validators=[DataRequired()])
    signature = StringField('Signal names', validators=[DataRequired()])
    params = StringField('Parameters', validators=[Optional()])

    def validate_signature(self, field):
        names = split_list(field.data)
        if not names:
            raise ValidationError('list at least one signal name')
        if len(set(names)) != len(names):
            raise ValidationError('signal names must be unique')

    def validate_params(self, field):
        for decl in split_list(field.data, ';'):
            parts = [part.strip() for part in decl.split(':')]
            if len(parts) != 4:
                raise ValidationError(f'{decl!r}: expected name:direction:lo:hi')
            sub = ParameterForm(MultiDict(zip(('name', 'direction', 'lo', 'hi'), parts)))
            if not sub.validate():
                messages = '; '.join(f'{k} {v[0]}' for k, v in sub.errors.items())
                raise ValidationError(f'{decl!r}: {messages}')
            try:
                parse_param_decl(decl)
            except FormulaError as exc:
                raise ValidationError(str(exc)) from None


class InputForm(Form):
    """[input] section: an optional table; every other key is a constant input"""
    table = StringField('Input table (CSV)', validators=[Optional()])

    def validate_table(self, field):
        if field.data and not Path(field.data).is_file():
            raise ValidationError(f'no such file: {field.data}')


class SystemForm(Form):
    """[system1] / [system2] sections"""
    kind = SelectField('Kind', choices=sorted(SYSTEM_KINDS), validators=[DataRequired()])
    traces = StringField('Recorded traces', validators=[Optional()])
    # bouncing ball
    x0 = FloatField('Initial height', validators=[Optional(), NumberRange(min=0)])
    g0 = FloatField('Mean gravity', validators=[Optional(), NumberRange(min=0)])
    sigma = FloatField('Gravity std', validators=[Optional(), NumberRange(min=0)])
    restitution = FloatField('Restitution', validators=[Optional(), NumberRange(min=0, max=1)])
    # hitting model
    distribution = StringField('Event-time distribution', validators=[
        Optional(), AnyOf(['uniform', 'normal'])
    ])
    a = FloatField('Uniform low', validators=[Optional()])
    b = FloatField('Uniform high', validators=[Optional()])
    mu = FloatField('Normal mean', validators=[Optional()])
    sd = FloatField('Normal std', validators=[Optional(), NumberRange(min=0)])
    shift = FloatField('Event-time shift', validators=[Optional()])
    signal = StringField('Signal name', validators=[Optional()])
    high = FloatField('Level before the event', validators=[Optional()])
    low = FloatField('Level after the event', validators=[Optional()])
    # second order
    wn = FloatField('Natural frequency', validators=[Optional(), NumberRange(min=0)])
    zeta = FloatField('Damping ratio', validators=[Optional(), NumberRange(min=0)])
    noise_sd = FloatField('Actuation noise std', validators=[Optional(), NumberRange(min=0)])
    band = FloatField('Settling band', validators=[Optional(), NumberRange(min=0)])
    wn_spread = FloatField('Natural frequency spread', validators=[Optional(), NumberRange(min=0)])
    y0_sd = FloatField('Initial output std', validators=[Optional(), NumberRange(min=0)])
    gain = FloatField('DC gain', validators=[Optional()])

    def validate_traces(self, field):
        if self.kind.data == 'replay':
            if not field.data:
                raise ValidationError('replay systems need a traces path')
            if not Path(field.data).exists():
                raise ValidationError(f'no such file or directory: {field.data}')

    def validate_b(self, field):
        if self.a.data is not None and field.data is not None and not field.data > self.a.data:
            raise ValidationError('uniform high must exceed uniform low')


class OutputForm(Form):
    """[output] section"""
    report = StringField('Report path', validators=[Optional()])


def split_list(text, separator=','):
    return [item.strip() for item in (text or '').split(separator) if item.strip()]


def validate_section(form_class, section_name, mapping, errors):
    """Validate one config section; messages are appended to ``errors``"""
    form = form_class(MultiDict(list((mapping or {}).items())))
    if not form.validate():
        for field_name, messages in form.errors.items():
            for message in messages:
                errors.append(f'{section_name}.{field_name}: {message}')
        return None
    unknown = set(mapping or {}) - set(form.data)
    if form_class is not InputForm:
        for key in sorted(unknown):
            errors.append(f'{section_name}.{key}: unknown key')
    return form.data


def validate_input_section(mapping, errors):
    """[input]: ``table`` plus numeric constants"""
    data = validate_section(InputForm, 'input', mapping, errors)
    if data is None:
        return None
    for key, value in (mapping or {}).items():
        if key == 'table':
            continue
        try:
            data[key] = float(value)
        except ValueError:
            errors.append(f'input.{key}: not a number: {value!r}')
    return data
