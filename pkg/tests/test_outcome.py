import io

import jsonpickle
import pytest
from pydantic import BaseModel

from tailrlab.bounds import VerificationFailedError
from tailrlab.config import MissingEnvironmentVariableError
from tailrlab.form import ConfigValidationError
from tailrlab.outcome import *
from tailrlab.outcome import _build_error_details


class DummyConfig(BaseModel):
    trials: int


@pytest.fixture
def schemas():
    return {'DummyConfig': DummyConfig.schema()}


class TestOutcomeBuilder:
    def test_ok(self):
        outcome = ok(files=['bounds.csv'])

        actual_body = jsonpickle.loads(outcome.to_json())
        expected_body = {
            'success': True,
            'exitCode': 0,
            'message': 'Run completed successfully',
            'errorDetails': [],
            'schemas': {},
            'files': ['bounds.csv']
        }

        assert actual_body == expected_body

    def test_verification_failed(self):
        error_details = [ErrorDetail(description='max_violation 0.5 exceeds tolerance 1e-12', location='prop2')]
        outcome = verification_failed(error_details)

        actual_body = jsonpickle.loads(outcome.to_json())
        expected_body = {
            'success': False,
            'exitCode': 1,
            'message': 'One or more verification checks exceeded their tolerance.',
            'errorDetails': [
                {
                    'description': 'max_violation 0.5 exceeds tolerance 1e-12',
                    'location': 'prop2'
                }
            ],
            'schemas': {},
            'files': []
        }

        assert actual_body == expected_body

    def test_bad_config(self, schemas):
        error_details = [
            ErrorDetail(description='description', location='some_field'),
            ErrorDetail(description='description', location='test_field')
        ]
        outcome = bad_config(error_details, schemas)

        assert outcome.exit_code == EXIT_CONFIG_ERROR
        assert outcome.message == 'Given configuration was incorrect. Consult the below details to address the issue.'
        assert outcome.error_details == error_details
        assert outcome.schemas == schemas

    def test_runtime_error(self):
        outcome = runtime_error(KeyError('w_out'))

        assert outcome.exit_code == EXIT_RUNTIME_ERROR
        assert outcome.message == 'Run failed due to a runtime error'
        assert outcome.error_details == [ErrorDetail(description="'w_out'", location='KeyError')]


class TestEmit:
    def test_success_writes_nothing(self):
        stream = io.StringIO()
        assert emit(ok(), stream) == EXIT_OK
        assert stream.getvalue() == ''

    def test_failure_is_written_as_json(self):
        stream = io.StringIO()
        outcome = verification_failed([ErrorDetail(description='too large', location='lemma_products')])

        assert emit(outcome, stream) == EXIT_VERIFICATION_FAILED
        body = jsonpickle.loads(stream.getvalue())
        assert body['errorDetails'][0]['location'] == 'lemma_products'


class TestErrorHandler:
    def test_ok_outcome(self):
        @error_handler
        def handler():
            return ok()

        outcome = handler()
        assert isinstance(outcome, Outcome)
        assert outcome.exit_code == EXIT_OK

    def test_verification_failure_names_each_check(self):
        @error_handler
        def handler():
            raise VerificationFailedError([('prop1', 'first'), ('prop2', 'second')])

        outcome = handler()
        assert outcome.exit_code == EXIT_VERIFICATION_FAILED
        assert [detail.location for detail in outcome.error_details] == ['prop1', 'prop2']

    def test_config_error_outcome(self, schemas):
        @error_handler
        def handler():
            raise ConfigValidationError(errors=[{'loc': ('data', 'n_train'), 'msg': 'too small'}], schemas=schemas)

        outcome = handler()
        assert outcome.exit_code == EXIT_CONFIG_ERROR
        assert outcome.error_details == [ErrorDetail(description='too small', location='data.n_train')]
        assert outcome.schemas == schemas

    def test_missing_environment_variable_outcome(self):
        @error_handler
        def handler():
            raise MissingEnvironmentVariableError('TAILRLAB_LOG_LEVEL')

        outcome = handler()
        assert outcome.exit_code == EXIT_CONFIG_ERROR
        assert outcome.error_details[0].location == 'TAILRLAB_LOG_LEVEL'

    def test_runtime_error_outcome(self, caplog):
        @error_handler
        def handler():
            raise Exception()

        outcome = handler()
        assert isinstance(outcome, Outcome)
        assert outcome.exit_code == EXIT_RUNTIME_ERROR
        assert 'Command handler failed' in caplog.text

    def test_build_error_details(self):
        errors = [
            {'loc': ['oracle', 'model'], 'msg': 'message'},
        ]
        error_details = _build_error_details(errors)

        assert len(error_details) == 1
        assert isinstance(error_details[0], ErrorDetail)
        assert error_details[0].location == 'oracle.model'
        assert error_details[0].description == 'message'
