import pytest

from eerdkit.fixtures import load_rubric_package, load_schema


@pytest.fixture(scope="session")
def hospital():
    return load_schema("hospital")


@pytest.fixture(scope="session")
def hospital_rubrics():
    return load_rubric_package("hospital")


@pytest.fixture(scope="session")
def company():
    return load_schema("company")


@pytest.fixture(scope="session")
def company_rubrics():
    return load_rubric_package("company")
