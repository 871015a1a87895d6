#!/usr/bin/env node
// Loads one page through an HTTP proxy and runs its scripts in order against
// a small DOM stand-in, the way a browser would for the purposes of error
// collection. Prints a JSON report on stdout.
//
//   node minibrowser.js --proxy http://127.0.0.1:8081 --url https://shop.test/
//
// Report: { errors: [{ text, stack }], beacons: [{ path, status }],
//           blocked: [url], failed: [{ url, status }] }
'use strict';

const http = require('http');
const vm = require('vm');

function arg(name, fallback) {
  const i = process.argv.indexOf('--' + name);
  return i > 0 && i + 1 < process.argv.length ? process.argv[i + 1] : fallback;
}

const proxy = new URL(arg('proxy', 'http://127.0.0.1:8081'));
const pageUrl = arg('url');
if (!pageUrl) {
  process.stderr.write('usage: minibrowser.js --proxy URL --url PAGE\n');
  process.exit(2);
}

function request(method, url, body, headers) {
  return new Promise((resolve) => {
    const req = http.request(
      { host: proxy.hostname, port: proxy.port, method, path: url, headers: Object.assign({ host: new URL(url).host }, headers || {}) },
      (res) => {
        const chunks = [];
        res.on('data', (c) => chunks.push(c));
        res.on('end', () => resolve({ status: res.statusCode, headers: res.headers, body: Buffer.concat(chunks).toString('utf8') }));
      }
    );
    req.on('error', (e) => resolve({ status: 0, headers: {}, body: String(e) }));
    if (body !== undefined && body !== null) req.write(body);
    req.end();
  });
}

const report = { errors: [], beacons: [], blocked: [], failed: [] };
const pending = [];

function lineCol(text, offset) {
  let line = 1;
  let last = -1;
  for (let i = 0; i < offset; i++) {
    if (text.charCodeAt(i) === 10) { line++; last = i; }
  }
  return { line, column: offset - last - 1 };
}

function attr(attrs, name) {
  const re = new RegExp('(?:^|\\s)' + name + '\\s*=\\s*(?:"([^"]*)"|\'([^\']*)\'|([^\\s>]+))', 'i');
  const m = re.exec(attrs);
  if (!m) return null;
  return (m[1] !== undefined ? m[1] : m[2] !== undefined ? m[2] : m[3])
    .replace(/&quot;/g, '"').replace(/&#39;/g, "'").replace(/&lt;/g, '<').replace(/&gt;/g, '>').replace(/&amp;/g, '&');
}

function parseScripts(html) {
  const out = [];
  const re = /<script\b([^>]*)>([\s\S]*?)<\/script\s*>/gi;
  let m;
  while ((m = re.exec(html))) {
    const contentStart = m.index + m[0].indexOf('>') + 1;
    const type = attr(m[1], 'type');
    if (type && !/^(text\/javascript|application\/javascript|module)$/i.test(type.trim())) continue;
    out.push({ src: attr(m[1], 'src'), code: m[2], pos: lineCol(html, contentStart) });
  }
  return out;
}

function parseIds(html) {
  const stripped = html.replace(/<script\b[^>]*>[\s\S]*?<\/script\s*>/gi, '');
  const ids = [];
  const re = /<[a-zA-Z][^>]*?\sid\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))/g;
  let m;
  while ((m = re.exec(stripped))) ids.push(m[1] !== undefined ? m[1] : m[2] !== undefined ? m[2] : m[3]);
  return ids;
}

function makeElement(tag, id, registry) {
  const el = {
    tagName: String(tag).toUpperCase(),
    id: id || '',
    className: '',
    innerHTML: '',
    textContent: '',
    value: '',
    style: {},
    dataset: {},
    children: [],
    classList: { add() {}, remove() {}, toggle() {}, contains() { return false; } },
    setAttribute(n, v) { if (n === 'id') { this.id = String(v); registry.set(this.id, this); } },
    getAttribute() { return null; },
    appendChild(c) { this.children.push(c); if (c && c.id) registry.set(c.id, c); return c; },
    removeChild(c) { return c; },
    insertBefore(c) { return this.appendChild(c); },
    addEventListener() {},
    removeEventListener() {},
    querySelector() { return null; },
    querySelectorAll() { return []; },
    getElementsByTagName() { return []; },
  };
  return el;
}

function firstFrame(stack) {
  const m = /\(?((?:https?|file):\/\/[^\s()]+?):(\d+):(\d+)\)?/.exec(stack || '');
  return m ? { filename: m[1], lineno: Number(m[2]), colno: Number(m[3]) } : { filename: '', lineno: 0, colno: 0 };
}

async function main() {
  const page = await request('GET', pageUrl);
  if (page.status !== 200) {
    report.failed.push({ url: pageUrl, status: page.status });
    process.stdout.write(JSON.stringify(report) + '\n');
    return;
  }
  const html = page.body;
  const registry = new Map();
  for (const id of parseIds(html)) registry.set(id, makeElement('div', id, registry));

  const listeners = { window: {}, document: {} };
  const on = (target) => (type, fn) => { (listeners[target][type] = listeners[target][type] || []).push(fn); };
  const timers = [];
  const loc = new URL(pageUrl);

  function post(url, body) {
    const abs = new URL(url, pageUrl).href;
    const p = request('POST', abs, body, { 'content-type': 'text/plain' }).then((r) => {
      report.beacons.push({ path: new URL(abs).pathname, status: r.status });
    });
    pending.push(p);
    return true;
  }

  class XMLHttpRequest {
    open(method, url) { this.method = method; this.url = url; }
    setRequestHeader() {}
    send(body) { if (this.method === 'POST') post(this.url, body); }
  }

  const sandbox = {
    console: { log() {}, info() {}, warn() {}, error() {}, debug() {} },
    navigator: { userAgent: 'minibrowser', sendBeacon: (url, body) => post(url, body) },
    location: { href: loc.href, protocol: loc.protocol, host: loc.host, hostname: loc.hostname, pathname: loc.pathname, search: loc.search, hash: loc.hash, origin: loc.origin },
    XMLHttpRequest,
    setTimeout: (fn) => { if (typeof fn === 'function') timers.push(fn); return timers.length; },
    setInterval: (fn) => { if (typeof fn === 'function') timers.push(fn); return timers.length; },
    clearTimeout() {},
    clearInterval() {},
    addEventListener: on('window'),
    removeEventListener() {},
  };
  const doc = {
    readyState: 'loading',
    cookie: '',
    title: '',
    location: sandbox.location,
    getElementById: (id) => registry.get(String(id)) || null,
    createElement: (tag) => makeElement(tag, '', registry),
    createTextNode: (t) => ({ textContent: String(t) }),
    querySelector: () => null,
    querySelectorAll: () => [],
    getElementsByTagName: () => [],
    getElementsByClassName: () => [],
    addEventListener: on('document'),
    removeEventListener() {},
    write() {},
  };
  doc.body = makeElement('body', '', registry);
  doc.head = makeElement('head', '', registry);
  doc.documentElement = makeElement('html', '', registry);
  sandbox.document = doc;
  sandbox.window = sandbox;
  sandbox.self = sandbox;
  const context = vm.createContext(sandbox);
  sandbox.window = vm.runInContext('this', context);

  function uncaught(e) {
    const name = e && e.name ? e.name : 'Error';
    const message = e && e.message !== undefined ? name + ': ' + e.message : String(e);
    const text = 'Uncaught ' + message;
    const stack = e && e.stack ? String(e.stack) : '';
    report.errors.push({ text, stack });
    const frame = firstFrame(stack);
    for (const fn of listeners.window.error || []) {
      try { fn({ message: text, error: e, filename: frame.filename, lineno: frame.lineno, colno: frame.colno }); } catch (ignored) {}
    }
  }

  function run(code, filename, pos) {
    let script;
    try {
      script = new vm.Script(code, { filename, lineOffset: pos.line - 1, columnOffset: pos.column });
    } catch (e) {
      uncaught(e);
      return;
    }
    try { script.runInContext(context); } catch (e) { uncaught(e); }
  }

  for (const s of parseScripts(html)) {
    if (s.src === null) {
      run(s.code, pageUrl, s.pos);
      continue;
    }
    const url = new URL(s.src, pageUrl).href;
    if (loc.protocol === 'https:' && url.startsWith('http:')) {
      report.blocked.push(url);
      continue;
    }
    const res = await request('GET', url);
    if (res.status !== 200) {
      report.failed.push({ url, status: res.status });
      continue;
    }
    run(res.body, url, { line: 1, column: 0 });
  }

  doc.readyState = 'complete';
  for (const fn of listeners.document.DOMContentLoaded || []) { try { fn({}); } catch (e) { uncaught(e); } }
  for (const fn of listeners.window.load || []) { try { fn({}); } catch (e) { uncaught(e); } }
  for (const fn of timers.splice(0)) { try { fn(); } catch (e) { uncaught(e); } }
  await Promise.all(pending);
  process.stdout.write(JSON.stringify(report) + '\n');
}

main().catch((e) => {
  process.stderr.write(String(e && e.stack || e) + '\n');
  process.exit(1);
});
