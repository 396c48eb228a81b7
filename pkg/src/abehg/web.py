"""HTTP/JSON surface for the authorization server and the resource server."""

from __future__ import annotations

import base64
import binascii
import hmac
import json
import logging

import httpx
from starlette.applications import Starlette
from starlette.concurrency import run_in_threadpool
from starlette.requests import Request
from starlette.responses import JSONResponse, Response
from starlette.routing import Route

from . import cpabe
from .authz import AuthorizationServer, TokenInfo, parse_scope
from .errors import OAuthError, ResourceError
from .resource import ResourceServer

logger = logging.getLogger(__name__)


def _oauth_error(exc: OAuthError) -> JSONResponse:
    body = {"error": exc.error}
    if exc.description:
        body["error_description"] = exc.description
    return JSONResponse(body, status_code=exc.status)


def _resource_error(exc: ResourceError) -> JSONResponse:
    headers = {"WWW-Authenticate": 'Bearer error="invalid_token"'} if exc.status == 401 else None
    body = {"error": exc.error}
    if exc.description:
        body["error_description"] = exc.description
    return JSONResponse(body, status_code=exc.status, headers=headers)


def bearer_token(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    scheme, _, value = header.partition(" ")
    if scheme.lower() != "bearer" or not value.strip():
        return None
    return value.strip()


def _basic_credentials(request: Request) -> tuple[str | None, str | None]:
    header = request.headers.get("authorization", "")
    scheme, _, value = header.partition(" ")
    if scheme.lower() != "basic":
        return None, None
    try:
        user, _, pw = base64.b64decode(value.strip()).decode("utf-8").partition(":")
    except (binascii.Error, UnicodeDecodeError):
        return None, None
    return user, pw


async def _params(request: Request) -> dict:
    ctype = request.headers.get("content-type", "")
    if ctype.startswith("application/x-www-form-urlencoded") or ctype.startswith("multipart/form-data"):
        form = await request.form()
        return dict(form)
    raw = await request.body()
    if not raw:
        return {}
    try:
        data = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise OAuthError("invalid_request", "body must be JSON or form-encoded") from None
    if not isinstance(data, dict):
        raise OAuthError("invalid_request", "body must be a JSON object")
    return data


def authz_routes(authz: AuthorizationServer, service_secret: str | None) -> list[Route]:
    def service_ok(request: Request) -> bool:
        token = bearer_token(request)
        return bool(service_secret) and token is not None and hmac.compare_digest(token, service_secret)

    async def register(request: Request):
        try:
            params = await _params(request)
            attrs = params.get("attributes", [])
            if isinstance(attrs, str):
                attrs = [attrs]
            client_id, secret = await run_in_threadpool(
                authz.register_client, params.get("role", "user"), attrs, params.get("external_id"))
        except OAuthError as exc:
            return _oauth_error(exc)
        return JSONResponse({"client_id": client_id, "client_secret": secret}, status_code=201)

    async def token(request: Request):
        try:
            params = await _params(request)
            grant = params.get("grant_type")
            if grant == "client_credentials":
                cid, secret = params.get("client_id"), params.get("client_secret")
                if cid is None:
                    cid, secret = _basic_credentials(request)
                issued = await run_in_threadpool(authz.issue_token, cid or "", secret or "", params.get("scope"))
            elif grant == "refresh_token":
                issued = authz.refresh(params.get("refresh_token", ""))
            else:
                raise OAuthError("unsupported_grant_type", f"grant_type {grant!r} is not supported")
        except OAuthError as exc:
            return _oauth_error(exc)
        return JSONResponse(issued.to_response(), headers={"Cache-Control": "no-store"})

    async def introspect(request: Request):
        if not service_ok(request):
            return _oauth_error(OAuthError("unauthorized", "introspection needs the service credential", 401))
        try:
            params = await _params(request)
        except OAuthError as exc:
            return _oauth_error(exc)
        return JSONResponse(authz.introspect(str(params.get("token", ""))).to_json())

    async def revoke(request: Request):
        try:
            params = await _params(request)
            admin = service_ok(request)
            client_id = None
            if not admin:
                cid, secret = params.get("client_id"), params.get("client_secret")
                if cid is None:
                    cid, secret = _basic_credentials(request)
                client = await run_in_threadpool(authz.authenticate, cid or "", secret or "")
                client_id = client.client_id
            authz.revoke(str(params.get("token", "")), client_id=client_id, admin=admin)
        except OAuthError as exc:
            return _oauth_error(exc)
        return JSONResponse({"revoked": True})

    async def client_info(request: Request):
        if not service_ok(request):
            return _oauth_error(OAuthError("unauthorized", "client lookup needs the service credential", 401))
        client = authz.get_client(request.path_params["client_id"])
        if client is None:
            return JSONResponse({"error": "not_found"}, status_code=404)
        return JSONResponse({"client_id": client.client_id, "role": client.role,
                             "attributes": sorted(client.registered_attrs)})

    return [
        Route("/oauth/register", register, methods=["POST"]),
        Route("/oauth/token", token, methods=["POST"]),
        Route("/oauth/introspect", introspect, methods=["POST"]),
        Route("/oauth/revoke", revoke, methods=["POST"]),
        Route("/oauth/clients/{client_id}", client_info, methods=["GET"]),
    ]


DEFAULT_MAX_BODY = 64 * 1024 * 1024


def resource_routes(resource: ResourceServer, max_body: int = DEFAULT_MAX_BODY) -> list[Route]:
    # Crypto and storage work runs in the threadpool, off the event loop.

    def handle(fn):
        async def endpoint(request: Request):
            try:
                return await fn(request)
            except ResourceError as exc:
                return _resource_error(exc)
        return endpoint

    async def read_json(request: Request, required: bool = True) -> dict:
        declared = request.headers.get("content-length", "")
        if declared.isdigit() and int(declared) > max_body:
            raise ResourceError(413, "request body too large")
        raw = b""
        async for chunk in request.stream():
            raw += chunk
            if len(raw) > max_body:
                raise ResourceError(413, "request body too large")
        if not raw and not required:
            return {}
        try:
            data = json.loads(raw)
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ResourceError(400, "body must be JSON") from None
        if not isinstance(data, dict):
            raise ResourceError(400, "body must be a JSON object")
        return data

    def upload_parts(data: dict):
        if "envelope" in data:
            return data["envelope"], data.get("policy_text"), data.get("meta")
        return data, None, None

    @handle
    async def public_key(request):
        return Response(cpabe.serialize_artifact(resource.public_key), media_type="application/json")

    @handle
    async def keys(request):
        data = await read_json(request, required=False)
        key = await run_in_threadpool(resource.issue_private_key, bearer_token(request), data.get("client_id"))
        return Response(b'{"private_key":' + key + b"}", media_type="application/json")

    @handle
    async def put_record(request):
        env, policy_text, meta = upload_parts(await read_json(request))
        rid = await run_in_threadpool(resource.put_record, bearer_token(request), env, policy_text, meta)
        return JSONResponse({"record_id": rid}, status_code=201)

    @handle
    async def list_records(request):
        owner = request.query_params.get("owner_client_id")
        return JSONResponse(await run_in_threadpool(resource.list_records, bearer_token(request), owner))

    @handle
    async def get_record(request):
        rid = request.path_params["record_id"]
        data = await run_in_threadpool(resource.get_record, bearer_token(request), rid)
        return Response(data, media_type="application/json")

    @handle
    async def update_record(request):
        env, policy_text, meta = upload_parts(await read_json(request))
        rid = request.path_params["record_id"]
        await run_in_threadpool(resource.update_record, bearer_token(request), rid, env, policy_text, meta)
        return JSONResponse({"record_id": rid, "updated": True})

    @handle
    async def delete_record(request):
        rid = request.path_params["record_id"]
        await run_in_threadpool(resource.delete_record, bearer_token(request), rid)
        return JSONResponse({"record_id": rid, "deleted": True})

    return [
        Route("/aa/public-key", public_key, methods=["GET"]),
        Route("/aa/keys", keys, methods=["POST"]),
        Route("/records", put_record, methods=["PUT"]),
        Route("/records", list_records, methods=["GET"]),
        Route("/records/{record_id}", get_record, methods=["GET"]),
        Route("/records/{record_id}", update_record, methods=["PUT"]),
        Route("/records/{record_id}", delete_record, methods=["DELETE"]),
    ]


def create_app(authz: AuthorizationServer | None = None, resource: ResourceServer | None = None,
               service_secret: str | None = None, max_body: int = DEFAULT_MAX_BODY) -> Starlette:
    async def healthz(request):
        return JSONResponse({"status": "ok"})

    routes = [Route("/healthz", healthz, methods=["GET"])]
    if authz is not None:
        routes += authz_routes(authz, service_secret)
    if resource is not None:
        routes += resource_routes(resource, max_body)
    return Starlette(routes=routes)


class RemoteAuthz:
    """Token directory backed by a remote authorization server over HTTP."""

    def __init__(self, base_url: str, service_secret: str, timeout: float = 10.0,
                 client: httpx.Client | None = None):
        self._client = client or httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)
        self._auth = {"Authorization": f"Bearer {service_secret}"}

    def introspect(self, token: str) -> TokenInfo:
        resp = self._client.post("/oauth/introspect", json={"token": token}, headers=self._auth)
        if resp.status_code != 200:
            return TokenInfo(active=False)
        doc = resp.json()
        if not doc.get("active"):
            return TokenInfo(active=False)
        return TokenInfo(active=True, client_id=doc.get("client_id"),
                         scope=parse_scope(doc.get("scope", "")) or frozenset(), expires_at=doc.get("exp"))

    def client_attributes(self, client_id: str) -> frozenset | None:
        resp = self._client.get(f"/oauth/clients/{client_id}", headers=self._auth)
        if resp.status_code != 200:
            return None
        return frozenset(resp.json().get("attributes", []))

    def close(self) -> None:
        self._client.close()
