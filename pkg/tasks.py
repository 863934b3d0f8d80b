from invoke import task


@task
def flake8(c):
    c.run("flake8 --max-line-length=120 ttabench tests")


@task
def test_mypy(c):
    c.run("mypy")


@task(flake8, test_mypy)
def test(c):
    c.run("pytest")
